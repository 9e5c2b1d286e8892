//! Synthetic regimes: logistic-normal designs over a layered tree, additive
//! ALR-scale contamination, replicates, and the evaluation metrics.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compdata::{alr_inverse, alr_transform, CompositionMatrix, LogRatioMatrix};
use crate::error::{dim_err, Result, TarcoError};
use crate::io;
use crate::linalg::sym_sqrt;
use crate::mecov::{working_sigma_u, ErrorCov, ReplicateSet};
use crate::rng::stream;
use crate::tree::{aggregate_coefficients, TaxTree};

/// Leaf block sizes of the layered tree at `p = 100`; the last block holds
/// the zero sub-block followed by the leaf-level effects.
const BLOCKS: [usize; 6] = [20, 10, 10, 20, 20, 20];
const BLOCK_VALUES: [f64; 5] = [0.5, -0.75, -0.25, 0.1, -0.1];
const ZERO_SUB: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub tau: f64,
    pub sigma: f64,
    pub seed: u64,
    pub misspecified: bool,
    pub replicates: usize,
    /// Optional tree override; leaves must be the `p` parts in block order.
    pub tree_newick: Option<String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 100,
            rho: 0.5,
            tau: 1.0,
            sigma: 0.5,
            seed: 1,
            misspecified: false,
            replicates: 2,
            tree_newick: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    P100N100,
    P200N100,
    P100N500,
    Misspec,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::P100N100 => "p100n100",
            Self::P200N100 => "p200n100",
            Self::P100N500 => "p100n500",
            Self::Misspec => "misspec",
        }
    }

    pub fn config(self, seed: u64) -> SimConfig {
        let base = SimConfig {
            seed,
            ..SimConfig::default()
        };
        match self {
            Self::P100N100 => base,
            Self::P200N100 => SimConfig { p: 200, ..base },
            Self::P100N500 => SimConfig { n: 500, ..base },
            Self::Misspec => SimConfig {
                misspecified: true,
                ..base
            },
        }
    }
}

impl FromStr for Regime {
    type Err = TarcoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p100n100" => Ok(Self::P100N100),
            "p200n100" => Ok(Self::P200N100),
            "p100n500" => Ok(Self::P100N500),
            "misspec" => Ok(Self::Misspec),
            _ => Err(TarcoError::Validation(format!(
                "unknown regime '{s}' (expected p100n100, p200n100, p100n500 or misspec)"
            ))),
        }
    }
}

fn scale_factor(p: usize) -> Result<usize> {
    if p == 0 || p % 100 != 0 {
        return Err(TarcoError::Validation(format!(
            "the layered design needs p to be a positive multiple of 100, got {p}"
        )));
    }
    Ok(p / 100)
}

/// Newick text of the layered tree: six block nodes `B1..B6` under the
/// root, with `B6` holding the zero sub-block `B6z` and the effect leaves.
pub fn layered_newick(p: usize) -> Result<String> {
    let k = scale_factor(p)?;
    let leaf = |j: usize| format!("x{}", j + 1);
    let mut parts = Vec::new();
    let mut start = 0;
    for (b, &size) in BLOCKS.iter().enumerate() {
        let size = size * k;
        let inner = if b + 1 < BLOCKS.len() {
            (start..start + size)
                .map(leaf)
                .collect::<Vec<_>>()
                .join(",")
        } else {
            let z = ZERO_SUB * k;
            let zero = (start..start + z).map(leaf).collect::<Vec<_>>().join(",");
            let rest = (start + z..start + size)
                .map(leaf)
                .collect::<Vec<_>>()
                .join(",");
            format!("({zero})B6z,{rest}")
        };
        parts.push(format!("({inner})B{}", b + 1));
        start += size;
    }
    Ok(format!("({});", parts.join(",")))
}

pub fn sim_tree(cfg: &SimConfig) -> Result<TaxTree> {
    let tree = match &cfg.tree_newick {
        Some(text) => TaxTree::parse_newick(text)?,
        None => TaxTree::parse_newick(&layered_newick(cfg.p)?)?,
    };
    if tree.n_leaves() != cfg.p {
        return Err(dim_err("simulation tree leaves", cfg.p, tree.n_leaves()));
    }
    Ok(tree)
}

/// Symmetric square root of the AR(1) correlation `ρ^{|i−j|}`.
pub fn ar1_sqrt(p: usize, rho: f64) -> DMatrix<f64> {
    let s = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    sym_sqrt(&s)
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    // row-major fill so draws do not depend on storage order
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Logistic-normal design: `W ~ N(μ, Σ)`, `X = softmax(W)`, `Z = ALR(X)`
/// with the last part as reference.
pub fn gen_design(
    cfg: &SimConfig,
    n: usize,
    root: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(CompositionMatrix, LogRatioMatrix)> {
    let p = cfg.p;
    if root.shape() != (p, p) {
        return Err(dim_err(
            "gen_design covariance root",
            format!("{p}x{p}"),
            format!("{}x{}", root.nrows(), root.ncols()),
        ));
    }
    let mu = ((p as f64) / 2.0).ln();
    let mut w = normal_matrix(rng, n, p) * root;
    for i in 0..n {
        for j in 0..p.min(5) {
            w[(i, j)] += mu;
        }
    }
    let wz = LogRatioMatrix::new(
        DMatrix::from_fn(n, p, |i, j| w[(i, j)] - w[(i, p - 1)]),
        p - 1,
    )?;
    let x = alr_inverse(&wz);
    let z = alr_transform(&x, p - 1)?;
    Ok((x, z))
}

/// `β*` in block layout and its node-scale aggregation `γ*`.
pub fn true_beta(
    cfg: &SimConfig,
    tree: &TaxTree,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = scale_factor(cfg.p)?;
    let mut beta = Vec::with_capacity(cfg.p);
    for (b, &size) in BLOCKS.iter().enumerate().take(5) {
        beta.extend(std::iter::repeat_n(BLOCK_VALUES[b], size * k));
    }
    beta.extend(std::iter::repeat_n(0.0, ZERO_SUB * k));
    let n_nu = (BLOCKS[5] - ZERO_SUB) * k;
    let nu: Vec<f64> = (0..n_nu)
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mean = nu.iter().sum::<f64>() / n_nu as f64;
    beta.extend(nu.iter().map(|v| v - mean));
    let mut beta = DVector::from_vec(beta);
    if cfg.misspecified {
        let kept: Vec<usize> = (0..cfg.p).filter(|j| (j + 1) % 5 != 0).collect();
        for j in (4..cfg.p).step_by(5) {
            beta[j] = 0.0;
        }
        let shift = kept.iter().map(|&j| beta[j]).sum::<f64>() / kept.len() as f64;
        for &j in &kept {
            beta[j] -= shift;
        }
    }
    let gamma = aggregate_coefficients(&beta, tree)?;
    Ok((beta, gamma))
}

/// Draws `U` with rows `N(0, Σ_U)` on the non-reference coordinates.
pub fn draw_error(
    n: usize,
    sigma_root: &DMatrix<f64>,
    reference: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let d = sigma_root.nrows();
    let red = normal_matrix(rng, n, d) * sigma_root;
    Ok(LogRatioMatrix::from_reduced(&red, reference)?.into_values())
}

/// `(Z̃, U)` with `Z̃ = Z + U`.
pub fn inject_error(
    z: &LogRatioMatrix,
    sigma: &ErrorCov,
    rng: &mut ChaCha8Rng,
) -> Result<(LogRatioMatrix, DMatrix<f64>)> {
    if sigma.n_parts() != z.ncols() || sigma.reference() != z.reference() {
        return Err(dim_err("inject_error", z.ncols(), sigma.n_parts()));
    }
    let root = sym_sqrt(sigma.matrix());
    let u = draw_error(z.nrows(), &root, z.reference(), rng)?;
    let zt = LogRatioMatrix::new(z.values() + &u, z.reference())?;
    Ok((zt, u))
}

/// `t` independent contaminated copies of each latent row.
pub fn make_replicates(
    z: &LogRatioMatrix,
    sigma: &ErrorCov,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ReplicateSet> {
    if t < 2 {
        return Err(TarcoError::Validation(format!(
            "need at least 2 replicates per sample, got {t}"
        )));
    }
    if sigma.n_parts() != z.ncols() || sigma.reference() != z.reference() {
        return Err(dim_err("make_replicates", z.ncols(), sigma.n_parts()));
    }
    let root = sym_sqrt(sigma.matrix());
    let zr = z.reduced();
    let d = zr.ncols();
    let mut groups: Vec<DMatrix<f64>> = (0..zr.nrows()).map(|_| DMatrix::zeros(t, d)).collect();
    for r in 0..t {
        let noise = normal_matrix(rng, zr.nrows(), d) * &root;
        for (i, g) in groups.iter_mut().enumerate() {
            for j in 0..d {
                g[(r, j)] = zr[(i, j)] + noise[(i, j)];
            }
        }
    }
    ReplicateSet::new(groups, z.reference())
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub tree: TaxTree,
    pub z: LogRatioMatrix,
    pub z_tilde: LogRatioMatrix,
    pub u: DMatrix<f64>,
    pub replicates: ReplicateSet,
    pub y: DVector<f64>,
    pub noise: DVector<f64>,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub sigma_u: ErrorCov,
    /// Independent error-free test set of the training size.
    pub z_test: LogRatioMatrix,
    pub y_test: DVector<f64>,
}

fn draw_noise(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn generate(cfg: &SimConfig) -> Result<SimDataset> {
    if cfg.n < 2 || cfg.p < 2 {
        return Err(TarcoError::Validation(
            "simulation needs n >= 2 and p >= 2".into(),
        ));
    }
    if !(cfg.tau >= 0.0 && cfg.sigma >= 0.0 && cfg.rho.abs() < 1.0) {
        return Err(TarcoError::Validation(
            "simulation needs tau >= 0, sigma >= 0 and |rho| < 1".into(),
        ));
    }
    let tree = sim_tree(cfg)?;
    let root = ar1_sqrt(cfg.p, cfg.rho);
    let reference = cfg.p - 1;
    let sigma_u = if cfg.tau > 0.0 {
        working_sigma_u(cfg.p, cfg.tau, reference)?
    } else {
        ErrorCov::zeros(cfg.p, reference)?
    };
    let (beta, gamma) = true_beta(cfg, &tree, &mut stream(cfg.seed, "beta", 0))?;
    let (_, z) = gen_design(cfg, cfg.n, &root, &mut stream(cfg.seed, "design", 0))?;
    let noise = draw_noise(cfg.n, cfg.sigma, &mut stream(cfg.seed, "noise", 0));
    let y = z.values() * &beta + &noise;
    let (z_tilde, u) = inject_error(&z, &sigma_u, &mut stream(cfg.seed, "error", 0))?;
    let replicates = make_replicates(
        &z,
        &sigma_u,
        cfg.replicates,
        &mut stream(cfg.seed, "replicates", 0),
    )?;
    let (_, z_test) = gen_design(cfg, cfg.n, &root, &mut stream(cfg.seed, "design", 1))?;
    let y_test =
        z_test.values() * &beta + draw_noise(cfg.n, cfg.sigma, &mut stream(cfg.seed, "noise", 1));
    Ok(SimDataset {
        config: cfg.clone(),
        tree,
        z,
        z_tilde,
        u,
        replicates,
        y,
        noise,
        beta,
        gamma,
        sigma_u,
        z_test,
        y_test,
    })
}

impl SimDataset {
    /// Writes the dataset bundle. `counts.csv` and `replicates.csv` hold the
    /// compositions of the contaminated rows so the bundle can be fed back
    /// through the fitting commands.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TarcoError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let taxa: Vec<String> = self.tree.leaf_labels().to_vec();
        let ids: Vec<String> = (1..=self.config.n).map(|i| format!("s{i}")).collect();
        let test_ids: Vec<String> = (1..=self.config.n).map(|i| format!("t{i}")).collect();
        io::write_table(&dir.join("Z.csv"), "sample", &taxa, &ids, self.z.values())?;
        io::write_table(
            &dir.join("Ztilde.csv"),
            "sample",
            &taxa,
            &ids,
            self.z_tilde.values(),
        )?;
        io::write_table(
            &dir.join("counts.csv"),
            "sample",
            &taxa,
            &ids,
            alr_inverse(&self.z_tilde).values(),
        )?;
        io::write_text(
            &dir.join("response.csv"),
            &io::vector_csv("sample", "y", &ids, &self.y),
        )?;
        io::write_table(
            &dir.join("Z_test.csv"),
            "sample",
            &taxa,
            &test_ids,
            self.z_test.values(),
        )?;
        io::write_text(
            &dir.join("response_test.csv"),
            &io::vector_csv("sample", "y", &test_ids, &self.y_test),
        )?;
        io::write_text(
            &dir.join("beta.csv"),
            &io::vector_csv("taxon", "value", &taxa, &self.beta),
        )?;
        io::write_text(
            &dir.join("gamma.csv"),
            &io::vector_csv("node", "value", self.tree.labels(), &self.gamma),
        )?;
        io::write_text(
            &dir.join("tree.nwk"),
            &format!("{}\n", self.tree.to_newick()),
        )?;
        let reduced_taxa: Vec<String> = taxa
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != self.sigma_u.reference())
            .map(|(_, t)| t.clone())
            .collect();
        io::write_table(
            &dir.join("sigma_u.csv"),
            "taxon",
            &reduced_taxa,
            &reduced_taxa,
            self.sigma_u.matrix(),
        )?;

        let mut rep_ids = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        let reference = self.replicates.reference();
        let mut n_rows = 0;
        for (i, g) in self.replicates.groups().iter().enumerate() {
            let full = LogRatioMatrix::from_reduced(g, reference)?;
            let comp = alr_inverse(&full);
            for r in 0..g.nrows() {
                rep_ids.push(ids[i].clone());
                rows.extend(comp.values().row(r).iter());
                n_rows += 1;
            }
        }
        let reps = DMatrix::from_row_slice(n_rows, taxa.len(), &rows);
        io::write_table(&dir.join("replicates.csv"), "group", &taxa, &rep_ids, &reps)?;
        io::write_text(
            &dir.join("config.json"),
            &format!("{}\n", serde_json::to_string_pretty(&self.config)?),
        )?;
        Ok(())
    }
}

pub fn metric_mspe(
    beta_hat: &DVector<f64>,
    z_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
) -> Result<f64> {
    if z_test.ncols() != beta_hat.len() || z_test.nrows() != y_test.len() {
        return Err(dim_err(
            "metric_mspe",
            format!("{}x{}", y_test.len(), beta_hat.len()),
            format!("{}x{}", z_test.nrows(), z_test.ncols()),
        ));
    }
    let r = y_test - z_test * beta_hat;
    Ok(r.norm_squared() / y_test.len() as f64)
}

pub fn metric_ae(beta_hat: &DVector<f64>, beta_star: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_star.len() {
        return Err(dim_err("metric_ae", beta_star.len(), beta_hat.len()));
    }
    Ok(beta_hat
        .iter()
        .zip(beta_star.iter())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Rand index by counting agreements over all unordered pairs.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err("rand_index", a.len(), b.len()));
    }
    let p = a.len();
    if p < 2 {
        return Err(TarcoError::Validation(
            "rand index needs at least two elements".into(),
        ));
    }
    let mut agree = 0u64;
    for i in 0..p {
        for j in (i + 1)..p {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    let pairs = (p * (p - 1) / 2) as f64;
    Ok(agree as f64 / pairs)
}

pub const KMEANS_RESTARTS: usize = 50;
pub const GR_CLUSTERS: usize = 5;

fn lloyd(x: &[f64], centers: &mut [f64]) -> (Vec<usize>, f64) {
    let assign = |centers: &[f64]| -> Vec<usize> {
        x.iter()
            .map(|&v| {
                let mut best = 0;
                for c in 1..centers.len() {
                    if (v - centers[c]).abs() < (v - centers[best]).abs() {
                        best = c;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(centers);
    for _ in 0..300 {
        for (c, center) in centers.iter_mut().enumerate() {
            let (mut s, mut m) = (0.0, 0usize);
            for (v, &l) in x.iter().zip(&labels) {
                if l == c {
                    s += v;
                    m += 1;
                }
            }
            if m > 0 {
                *center = s / m as f64;
            }
        }
        let next = assign(centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let ss = x
        .iter()
        .zip(&labels)
        .map(|(v, &l)| (v - centers[l]).powi(2))
        .sum();
    (labels, ss)
}

/// One-dimensional k-means with k-means++ seeding and restarts; returns the
/// labelling with the smallest within-cluster sum of squares (first wins on
/// ties). `k` is capped at the number of distinct values.
pub fn kmeans_1d(x: &[f64], k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = k.min(distinct.len()).max(1);
    if k == distinct.len() {
        return x
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect();
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![*x.choose(rng).expect("nonempty input")];
        while centers.len() < k {
            let d2: Vec<f64> = x
                .iter()
                .map(|v| {
                    centers
                        .iter()
                        .map(|c| (v - c).powi(2))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            centers.push(x[pick]);
        }
        let (labels, ss) = lloyd(x, &mut centers);
        if best.as_ref().is_none_or(|b| ss < b.1) {
            best = Some((labels, ss));
        }
    }
    best.expect("at least one restart").0
}

/// Group recovery: Rand index between 5-means partitions of `β*` and `β̂`.
pub fn metric_gr(beta_hat: &DVector<f64>, beta_star: &DVector<f64>, seed: u64) -> Result<f64> {
    if beta_hat.len() != beta_star.len() {
        return Err(dim_err("metric_gr", beta_star.len(), beta_hat.len()));
    }
    let truth = kmeans_1d(
        beta_star.as_slice(),
        GR_CLUSTERS,
        KMEANS_RESTARTS,
        &mut stream(seed, "kmeans", 0),
    );
    let est = kmeans_1d(
        beta_hat.as_slice(),
        GR_CLUSTERS,
        KMEANS_RESTARTS,
        &mut stream(seed, "kmeans", 1),
    );
    rand_index(&truth, &est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn layered_tree_shape() {
        let t = TaxTree::parse_newick(&layered_newick(100).unwrap()).unwrap();
        assert_eq!(t.n_leaves(), 100);
        assert_eq!(t.n_nodes(), 107);
        assert_eq!(t.root_children().len(), 6);
        let b6 = t.node_index("B6").unwrap();
        assert_eq!(t.leaf_count(b6), 20);
        assert_eq!(t.children(b6).len(), 6);
        assert_eq!(t.leaf_count(t.node_index("B6z").unwrap()), 15);
        assert!(layered_newick(150).is_err());
    }

    #[test]
    fn beta_blocks_and_sparsity() {
        let cfg = SimConfig::default();
        let tree = sim_tree(&cfg).unwrap();
        let (beta, gamma) = true_beta(&cfg, &tree, &mut stream(3, "beta", 0)).unwrap();
        assert!(beta.sum().abs() < 1e-12);
        assert_eq!(beta[0], 0.5);
        assert_eq!(beta[25], -0.75);
        // eleven groups: five blocks, the zero sub-block and five leaves
        assert_eq!(gamma.iter().filter(|g| **g != 0.0).count(), 10);
        assert_eq!(gamma[tree.node_index("B6z").unwrap()], 0.0);
        assert!((95..100).all(|j| gamma[j] != 0.0));
        let big = SimConfig {
            p: 200,
            ..cfg.clone()
        };
        let tree2 = sim_tree(&big).unwrap();
        let (b2, g2) = true_beta(&big, &tree2, &mut stream(3, "beta", 0)).unwrap();
        assert!(b2.sum().abs() < 1e-12);
        assert_eq!(g2.iter().filter(|g| **g != 0.0).count(), 15);
        let mis = SimConfig {
            misspecified: true,
            ..cfg
        };
        let (bm, _) = true_beta(&mis, &tree, &mut stream(3, "beta", 0)).unwrap();
        assert!(bm.sum().abs() < 1e-12);
        assert!((4..100).step_by(5).all(|j| bm[j] == 0.0));
    }

    #[test]
    fn metric_hand_cases() {
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(
            metric_mspe(&dvector![0.0], &z, &dvector![1.0, -1.0]).unwrap(),
            1.0
        );
        assert_eq!(
            metric_ae(&dvector![1.0, -1.0], &dvector![0.0, 0.0]).unwrap(),
            2.0
        );
        let ri = rand_index(&[0, 0, 1, 1], &[0, 1, 2, 2]).unwrap();
        assert!((ri - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(rand_index(&[0, 0, 1], &[2, 2, 0]).unwrap(), 1.0);
    }

    #[test]
    fn gr_identity_and_degenerate() {
        let cfg = SimConfig::default();
        let tree = sim_tree(&cfg).unwrap();
        let (beta, _) = true_beta(&cfg, &tree, &mut stream(9, "beta", 0)).unwrap();
        assert_eq!(metric_gr(&beta, &beta, 4).unwrap(), 1.0);
        let zero = DVector::zeros(100);
        let gr = metric_gr(&zero, &beta, 4).unwrap();
        assert!(gr > 0.0 && gr < 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig {
            n: 20,
            seed: 11,
            ..SimConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.z_tilde, b.z_tilde);
        assert_eq!(a.y, b.y);
        assert!((a.z_tilde.values() - a.z.values() - &a.u).amax() < 1e-13);
        assert!((&a.y - a.z.values() * &a.beta - &a.noise).amax() < 1e-12);
        assert!(a.u.column(99).iter().all(|v| *v == 0.0));
        let x = alr_inverse(&a.z);
        for i in 0..20 {
            assert!((x.values().row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}
