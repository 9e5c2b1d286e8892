//! Naive and bias-corrected quadratic pieces, and the leaf-count weighted
//! projection onto the positive-semidefinite cone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TarcoError};
use crate::linalg::{eigen_map, gram_cross, max_asymmetry, min_eigenvalue, symmetrize};
use crate::mecov::AggregatedErrorCov;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadKind {
    Naive,
    Corrected,
    Projected,
    Oracle,
}

/// The pair (Gram matrix, cross vector) defining `½γᵀGγ − cᵀγ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPieces {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub n: usize,
    pub kind: QuadKind,
}

impl QuadraticPieces {
    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    /// `½γᵀGγ − crossᵀγ`.
    pub fn loss(&self, gamma: &DVector<f64>) -> f64 {
        0.5 * gamma.dot(&(&self.gram * gamma)) - self.cross.dot(gamma)
    }
}

fn check_design(z_agg: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if z_agg.nrows() != y.len() {
        return Err(dim_err("quadratic pieces (rows)", z_agg.nrows(), y.len()));
    }
    if z_agg.nrows() == 0 {
        return Err(TarcoError::Validation("design has no rows".into()));
    }
    Ok(())
}

/// `(n⁻¹Z̃_AᵀZ̃_A, n⁻¹Z̃_Aᵀy)`.
pub fn naive_quadratic(z_agg: &DMatrix<f64>, y: &DVector<f64>) -> Result<QuadraticPieces> {
    check_design(z_agg, y)?;
    let (gram, cross) = gram_cross(z_agg, y);
    Ok(QuadraticPieces {
        gram,
        cross,
        n: y.len(),
        kind: QuadKind::Naive,
    })
}

/// Same Gram computed on the latent (error-free) design.
pub fn oracle_quadratic(z_agg: &DMatrix<f64>, y: &DVector<f64>) -> Result<QuadraticPieces> {
    let mut q = naive_quadratic(z_agg, y)?;
    q.kind = QuadKind::Oracle;
    Ok(q)
}

/// `Ψ̂ = n⁻¹Z̃_AᵀZ̃_A − Σ_{U,A}`; the cross vector needs no adjustment.
pub fn corrected_quadratic(
    z_agg: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_agg: &AggregatedErrorCov,
) -> Result<QuadraticPieces> {
    let mut q = naive_quadratic(z_agg, y)?;
    let s = sigma_agg.matrix();
    if s.shape() != q.gram.shape() {
        return Err(dim_err(
            "corrected_quadratic",
            format!("{0}x{0}", q.dim()),
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    q.gram -= s;
    symmetrize(&mut q.gram);
    q.kind = QuadKind::Corrected;
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Penalty relative to the largest entry of the rescaled matrix.
    pub rho: f64,
    /// Over-relaxation factor in `[1, 2)`.
    pub relaxation: f64,
    /// Among matrices within the certified gap of the optimal deviation,
    /// return the one nearest to the input in Frobenius norm.
    pub tie_break: bool,
    /// Relative primal/dual residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop once the certified relative duality gap falls below this.
    pub gap_tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            rho: 0.5,
            relaxation: 1.6,
            tie_break: true,
            tol: 1e-7,
            max_iter: 2000,
            gap_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `‖W⁻¹(Ψ̂ − Ψ̃)W⁻¹‖_max` of the returned matrix.
    pub weighted_max_deviation: f64,
    /// Certified lower bound on the optimal deviation.
    pub lower_bound: f64,
    pub min_eigenvalue: f64,
    pub converged: bool,
}

/// Weighted entrywise max norm `max_kl |M_kl| / (w_k w_l)`.
pub fn weighted_max_norm(m: &DMatrix<f64>, weights: &DVector<f64>) -> f64 {
    let n = m.nrows();
    let mut best = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            best = best.max(m[(i, j)].abs() / (weights[i] * weights[j]));
        }
    }
    best
}

/// Packed upper triangle; off-diagonal entries count twice.
struct UpperTriangle {
    n: usize,
    mult: Vec<f64>,
}

impl UpperTriangle {
    fn new(n: usize) -> Self {
        let mut mult = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                mult.push(if i == j { 1.0 } else { 2.0 });
            }
        }
        Self { n, mult }
    }

    fn pack(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mult.len());
        for j in 0..self.n {
            for i in 0..=j {
                out.push(m[(i, j)]);
            }
        }
        out
    }

    fn unpack(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let mut idx = 0;
        for j in 0..self.n {
            for i in 0..=j {
                m[(i, j)] = v[idx];
                m[(j, i)] = v[idx];
                idx += 1;
            }
        }
        m
    }

    /// Prox of the max norm: `argmin_d max_i |d_i| + ½ a Σ m_i (d_i − v_i)²`,
    /// which clamps `v` to `±s` with `a Σ m_i (|v_i| − s)_+ = 1`.
    fn max_norm_prox(&self, v: &mut [f64], a: f64) {
        let total: f64 = a * v
            .iter()
            .zip(&self.mult)
            .map(|(x, m)| m * x.abs())
            .sum::<f64>();
        if total <= 1.0 {
            v.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()));
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut level = 0.0;
        for (pos, &i) in order.iter().enumerate() {
            let w = self.mult[i] * a;
            s1 += w * v[i].abs();
            s2 += w;
            let cand = (s1 - 1.0) / s2;
            let next = order.get(pos + 1).map(|&k| v[k].abs()).unwrap_or(0.0);
            if cand >= next {
                level = cand;
                break;
            }
        }
        for x in v.iter_mut() {
            *x = x.clamp(-level, level);
        }
    }
}

const GAP_CHECK_EVERY: usize = 10;
/// ADMM penalty of the tie-breaking pass, where entry weights are at most 1.
const TIE_RHO: f64 = 0.05;

/// Lower bound `−⟨Y, M̂⟩` from a dual candidate made feasible: PSD part of
/// `Y`, rescaled to unit entrywise ℓ1 norm.
fn dual_bound(y: &DMatrix<f64>, m_hat: &DMatrix<f64>) -> f64 {
    let mut sym = y.clone();
    symmetrize(&mut sym);
    let yp = eigen_map(&sym.symmetric_eigen(), |l| l.max(0.0));
    let l1: f64 = yp.iter().map(|v| v.abs()).sum();
    if l1 == 0.0 {
        return 0.0;
    }
    -yp.dot(m_hat) / l1
}

/// Weighted Frobenius projection of `M̂` onto PSD matrices whose deviation
/// stays within `ceiling` entrywise, by ADMM with a box-clamp step, stopped
/// after `iters` passes. Returns the passes used and the last PSD iterate,
/// which may exceed the box slightly.
fn nearest_within(
    m_hat: &DMatrix<f64>,
    weights: &DVector<f64>,
    ceiling: f64,
    iters: usize,
    opts: &ProjectionOptions,
) -> (usize, Option<DMatrix<f64>>) {
    let n = m_hat.nrows();
    let tri = UpperTriangle::new(n);
    // Frobenius distance on the original scale: entry (i, j) counts w_i² w_j²
    let w2 = weights.map(|w| w * w);
    let top = w2.max() * w2.max();
    let mut b = Vec::with_capacity(tri.mult.len());
    for j in 0..n {
        for i in 0..=j {
            b.push(w2[i] * w2[j] / top);
        }
    }
    let rho = TIE_RHO;
    let abs_floor = 1e-14 * m_hat.amax() * n as f64;
    let mut theta = m_hat.clone();
    let mut dual = DMatrix::zeros(n, n);
    let mut psi = None;
    let mut used = 0;
    for _ in 0..iters {
        used += 1;
        let cur = eigen_map(&(&theta - &dual).symmetric_eigen(), |l| l.max(0.0));
        let psi_hat = &cur * opts.relaxation + &theta * (1.0 - opts.relaxation);
        let mut v = tri.pack(&(&psi_hat + &dual - m_hat));
        for (x, bk) in v.iter_mut().zip(&b) {
            *x = (rho * *x / (bk + rho)).clamp(-ceiling, ceiling);
        }
        let theta_new = m_hat + tri.unpack(&v);
        dual += &psi_hat - &theta_new;
        let r_norm = (&cur - &theta_new).norm();
        let s_norm = rho * (&theta_new - &theta).norm();
        theta = theta_new;
        let done = r_norm <= abs_floor + opts.tol * cur.norm().max(theta.norm())
            && s_norm <= abs_floor + opts.tol * rho * dual.norm();
        psi = Some(cur);
        if done {
            break;
        }
    }
    (used, psi)
}

/// Solves `min_{Ψ ⪰ 0} ‖W⁻¹(Ψ̂ − Ψ)W⁻¹‖_max` by ADMM.
///
/// The split is `Ψ = Θ` with `Ψ` on the PSD cone (eigenvalue clipping) and
/// `Θ` carrying the max norm, whose prox is a clamp. The minimizer is rarely
/// unique, so a second pass moves toward the Frobenius-nearest PSD matrix
/// without giving up the certified gap. Non-convergence is reported, not
/// raised; the best PSD iterate is returned.
pub fn psd_project(
    gram: &DMatrix<f64>,
    weights: &DVector<f64>,
    opts: &ProjectionOptions,
) -> Result<(DMatrix<f64>, ProjectionReport)> {
    let n = gram.nrows();
    if !gram.is_square() || weights.len() != n {
        return Err(dim_err(
            "psd_project",
            format!("square {n}x{n} with {n} weights"),
            format!("{}x{} with {}", gram.nrows(), gram.ncols(), weights.len()),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(TarcoError::Validation(
            "projection weights must be positive".into(),
        ));
    }
    if !(opts.rho > 0.0) || !(1.0..2.0).contains(&opts.relaxation) {
        return Err(TarcoError::Validation(
            "projection needs rho > 0 and relaxation in [1, 2)".into(),
        ));
    }
    let scale = gram.amax().max(1.0);
    if max_asymmetry(gram) > 1e-10 * scale {
        return Err(TarcoError::Validation(
            "matrix to project is not symmetric".into(),
        ));
    }
    let mut target = gram.clone();
    symmetrize(&mut target);

    let eig = target.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if n == 0 || min_eig >= 0.0 {
        return Ok((
            target,
            ProjectionReport {
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                weighted_max_deviation: 0.0,
                lower_bound: 0.0,
                min_eigenvalue: if n == 0 { 0.0 } else { min_eig },
                converged: true,
            },
        ));
    }

    // Work on M = W⁻¹ Ψ̂ W⁻¹, where the objective is the plain max norm.
    let tri = UpperTriangle::new(n);
    let inv_w = weights.map(|w| 1.0 / w);
    let mut m_hat = target.clone();
    for j in 0..n {
        for i in 0..n {
            m_hat[(i, j)] *= inv_w[i] * inv_w[j];
        }
    }
    let m_scale = m_hat.amax().max(f64::MIN_POSITIVE);
    let rho = opts.rho / m_scale;
    let abs_floor = 1e-14 * m_scale * n as f64;
    let mut theta = m_hat.clone();
    let mut dual = DMatrix::zeros(n, n);
    let mut best = (f64::INFINITY, DMatrix::zeros(n, n));
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let mut residual_converged = false;
    let mut iterations = 0;
    // a PSD matrix has a nonnegative diagonal
    let mut lower = (0..n).fold(0.0f64, |m, k| m.max(-m_hat[(k, k)]));
    // leave half of the gap for the tie-breaking pass
    let target = if opts.tie_break {
        0.5 * opts.gap_tol
    } else {
        opts.gap_tol
    };
    for it in 0..opts.max_iter {
        iterations += 1;
        let psi = eigen_map(&(&theta - &dual).symmetric_eigen(), |l| l.max(0.0));
        let dev = (&psi - &m_hat).amax();
        if dev < best.0 {
            best = (dev, psi.clone());
        }
        let psi_hat = &psi * opts.relaxation + &theta * (1.0 - opts.relaxation);
        let mut v = tri.pack(&(&psi_hat + &dual - &m_hat));
        tri.max_norm_prox(&mut v, rho);
        let theta_new = &m_hat + tri.unpack(&v);
        dual += &psi_hat - &theta_new;
        r_norm = (&psi - &theta_new).norm();
        s_norm = rho * (&theta_new - &theta).norm();
        theta = theta_new;
        if r_norm <= abs_floor + opts.tol * psi.norm().max(theta.norm())
            && s_norm <= abs_floor + opts.tol * rho * dual.norm()
        {
            residual_converged = true;
            break;
        }
        if (it + 1) % GAP_CHECK_EVERY == 0 {
            lower = lower.max(dual_bound(&(&dual * rho), &m_hat));
            if best.0 - lower <= target * best.0 {
                break;
            }
        }
    }
    if opts.tie_break {
        // the box is attained by the current best; moving toward the
        // nearer matrix is allowed while the certified gap is kept
        let accept = best.0.max(lower / (1.0 - opts.gap_tol));
        let (used, nearer) = nearest_within(&m_hat, weights, best.0, opts.max_iter / 4, opts);
        iterations += used;
        if let Some(nearer) = nearer {
            let step = &nearer - &best.1;
            let dev_at = |t: f64| (&best.1 + &step * t - &m_hat).amax();
            // the deviation is convex in t and within `accept` at t = 0
            let (mut lo, mut hi) = (0.0, 1.0);
            if dev_at(1.0) <= accept {
                lo = 1.0;
            } else {
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if dev_at(mid) <= accept {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            if lo > 0.0 {
                let blended = &best.1 + step * lo;
                best = ((&blended - &m_hat).amax(), blended);
            }
        }
    }
    let (dev, mut out) = best;
    let converged = residual_converged || dev - lower <= opts.gap_tol * dev;
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] *= weights[i] * weights[j];
        }
    }
    symmetrize(&mut out);
    let report = ProjectionReport {
        iterations,
        primal_residual: r_norm,
        dual_residual: s_norm,
        weighted_max_deviation: dev,
        lower_bound: lower,
        min_eigenvalue: min_eigenvalue(&out),
        converged,
    };
    if !converged {
        log::warn!(
            "psd projection stopped after {iterations} iterations (primal {r_norm:e}, dual {s_norm:e})"
        );
    }
    Ok((out, report))
}

/// Projects the Gram matrix of corrected pieces; the cross vector is kept.
pub fn project_pieces(
    q: &QuadraticPieces,
    weights: &DVector<f64>,
    opts: &ProjectionOptions,
) -> Result<(QuadraticPieces, ProjectionReport)> {
    let (gram, report) = psd_project(&q.gram, weights, opts)?;
    Ok((
        QuadraticPieces {
            gram,
            cross: q.cross.clone(),
            n: q.n,
            kind: QuadKind::Projected,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn naive_outer_product() {
        let q = naive_quadratic(&dmatrix![1.0, 2.0], &dvector![3.0]).unwrap();
        assert_eq!(q.gram, dmatrix![1.0, 2.0; 2.0, 4.0]);
        assert_eq!(q.cross, dvector![3.0, 6.0]);
        let q0 = naive_quadratic(&dmatrix![1.0, 2.0; 0.5, 1.0], &dvector![0.0, 0.0]).unwrap();
        assert_eq!(q0.cross, dvector![0.0, 0.0]);
        assert!(naive_quadratic(&dmatrix![1.0, 2.0], &dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn orthonormal_design_gives_identity() {
        let s = 2f64.sqrt();
        let x = dmatrix![1.0, 1.0; 1.0, -1.0] * (1.0 / s) * s;
        let q = naive_quadratic(&x, &dvector![0.0, 0.0]).unwrap();
        assert!((q.gram - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn corrected_subtracts() {
        let sig = AggregatedErrorCov::zeros(2);
        let x = dmatrix![1.0, 2.0];
        let y = dvector![3.0];
        let naive = naive_quadratic(&x, &y).unwrap();
        let corr = corrected_quadratic(&x, &y, &sig).unwrap();
        assert_eq!(corr.gram, naive.gram);
        assert_eq!(corr.cross, naive.cross);
        assert!(corrected_quadratic(&x, &y, &AggregatedErrorCov::zeros(3)).is_err());
    }

    #[test]
    fn max_norm_prox_matches_grid_search() {
        let tri = UpperTriangle::new(3);
        let v: Vec<f64> = vec![0.3, -1.2, 2.5, 0.7, -0.1, 4.0];
        let a = 0.4;
        let mut d = v.clone();
        tri.max_norm_prox(&mut d, a);
        let f = |s: f64| -> f64 {
            s + 0.5
                * a
                * v.iter()
                    .zip(&tri.mult)
                    .map(|(x, m)| m * (x.abs() - s).max(0.0).powi(2))
                    .sum::<f64>()
        };
        let level = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..=4000 {
            assert!(f(level) <= f(k as f64 * 1e-3) + 1e-12);
        }
        let mut small = vec![0.01, 0.0, 0.0, 0.0, 0.0, 0.0];
        tri.max_norm_prox(&mut small, a);
        assert_eq!(small, vec![0.0; 6]);
    }

    #[test]
    fn psd_input_is_fixed_point() {
        let (out, rep) = psd_project(
            &DMatrix::identity(2, 2),
            &dvector![1.0, 1.0],
            &ProjectionOptions::default(),
        )
        .unwrap();
        assert_eq!(out, DMatrix::identity(2, 2));
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn diag_one_minus_one() {
        let (out, rep) = psd_project(
            &dmatrix![1.0, 0.0; 0.0, -1.0],
            &dvector![1.0, 1.0],
            &ProjectionOptions::default(),
        )
        .unwrap();
        assert!((rep.weighted_max_deviation - 1.0).abs() < 1e-6);
        assert!((out - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-6);
        assert!(rep.min_eigenvalue >= -1e-8);
        assert!(rep.converged);
    }

    #[test]
    fn rejects_bad_input() {
        let opts = ProjectionOptions::default();
        assert!(psd_project(&dmatrix![1.0, 2.0; 0.0, 1.0], &dvector![1.0, 1.0], &opts).is_err());
        assert!(psd_project(&dmatrix![1.0, 0.0; 0.0, 1.0], &dvector![1.0, 0.0], &opts).is_err());
        assert!(psd_project(&dmatrix![1.0, 0.0; 0.0, 1.0], &dvector![1.0], &opts).is_err());
    }

    #[test]
    fn iteration_cap_is_not_fatal() {
        let m = dmatrix![1.0, 3.0, 0.0; 3.0, 1.0, 2.0; 0.0, 2.0, 1.0];
        let opts = ProjectionOptions {
            max_iter: 2,
            ..Default::default()
        };
        let (out, rep) = psd_project(&m, &dvector![1.0, 2.0, 1.0], &opts).unwrap();
        assert!(!rep.converged, "{rep:?}");
        assert_eq!(rep.iterations, 2);
        assert!(min_eigenvalue(&out) >= -1e-10);
    }
}
