//! Monte Carlo benchmark: every estimator, tuned by cross-validation, on
//! replicated synthetic datasets.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::ProjectionOptions;
use crate::cv::{cv_path, kfold_split, prepare_folds, PreparedFolds, DEFAULT_FOLDS};
use crate::error::{Result, TarcoError};
use crate::io::fmt_f64;
use crate::mecov::estimate_sigma_u;
use crate::pipeline::{leaf_coefficients, method_penalty, Design, Method};
use crate::simulate::{generate, metric_ae, metric_gr, metric_mspe, SimConfig};
use crate::solver::{default_grid, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sim: SimConfig,
    pub reps: usize,
    pub kfolds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub methods: Vec<Method>,
    /// Group recovery is skipped when false.
    pub with_gr: bool,
}

impl BenchConfig {
    pub fn new(sim: SimConfig, reps: usize) -> Self {
        let with_gr = !sim.misspecified;
        Self {
            sim,
            reps,
            kfolds: DEFAULT_FOLDS,
            grid_len: 50,
            grid_ratio: 1e-3,
            methods: Method::benchmark_set(),
            with_gr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub replicate: usize,
    pub mspe: f64,
    pub ae: f64,
    pub gr: Option<f64>,
    pub lambda: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub count: usize,
    pub mspe_mean: f64,
    pub mspe_sd: f64,
    pub ae_mean: f64,
    pub ae_sd: f64,
    pub gr_mean: Option<f64>,
    pub gr_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<MethodSummary>,
    pub failed_replicates: Vec<(usize, String)>,
}

impl BenchReport {
    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn rows_csv(&self, with_gr: bool) -> String {
        let mut out = String::from(if with_gr {
            "method,replicate,MSPE,AE,GR\n"
        } else {
            "method,replicate,MSPE,AE\n"
        });
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                r.method,
                r.replicate,
                fmt_f64(r.mspe),
                fmt_f64(r.ae)
            ));
            if with_gr {
                out.push(',');
                out.push_str(&r.gr.map(fmt_f64).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    /// Mean and standard deviation per method and metric.
    pub fn summary_csv(&self, with_gr: bool) -> String {
        let mut out = String::from("method,n,MSPE_mean,MSPE_sd,AE_mean,AE_sd");
        out.push_str(if with_gr { ",GR_mean,GR_sd\n" } else { "\n" });
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                s.method,
                s.count,
                fmt_f64(s.mspe_mean),
                fmt_f64(s.mspe_sd),
                fmt_f64(s.ae_mean),
                fmt_f64(s.ae_sd)
            ));
            if with_gr {
                out.push_str(&format!(
                    ",{},{}",
                    s.gr_mean.map(fmt_f64).unwrap_or_default(),
                    s.gr_sd.map(fmt_f64).unwrap_or_default()
                ));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs one Monte Carlo replicate; the dataset seed is `base seed + r`.
pub fn run_replicate(cfg: &BenchConfig, r: usize) -> Result<Vec<MetricRow>> {
    let sim = SimConfig {
        seed: cfg.sim.seed.wrapping_add(r as u64),
        ..cfg.sim.clone()
    };
    let ds = generate(&sim)?;
    let sigma_hat = estimate_sigma_u(&ds.replicates)?;
    let agg = ds.tree.aggregation();
    let plan = kfold_split(sim.n, cfg.kfolds, sim.seed)?;
    let proj = ProjectionOptions::default();
    let solver = SolverOptions::default();

    let mut cache: Vec<(&'static str, PreparedFolds)> = Vec::new();
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let key = match method {
            Method::Tarco(_) => "tarco",
            Method::TracNaive => "naive",
            Method::FlatCorrected => "flat",
        };
        if !cache.iter().any(|(k, _)| *k == key) {
            let design = Design::for_method(method, &ds.z_tilde, &ds.y, &agg, &sigma_hat)?;
            cache.push((key, prepare_folds(&design, &plan, &proj)?));
        }
        let prepared = &cache.iter().find(|(k, _)| *k == key).expect("cached").1;
        let dim = prepared.full.dim();
        let weights = DVector::from_column_slice(&method_penalty(method, &ds.tree, dim).weights);
        let lmax = prepared.full.lambda_max(&weights);
        if !(lmax > 0.0) {
            return Err(TarcoError::Validation(
                "lambda_max is zero; the response carries no signal".into(),
            ));
        }
        let grid = default_grid(lmax, cfg.grid_len, cfg.grid_ratio);
        let outcome = cv_path(prepared, &weights, &grid, &solver)?;
        let beta = leaf_coefficients(
            method,
            &outcome.solution.gamma,
            &agg,
            ds.z_tilde.reference(),
        )?;
        let gr = if cfg.with_gr {
            Some(metric_gr(&beta, &ds.beta, sim.seed)?)
        } else {
            None
        };
        rows.push(MetricRow {
            method: method.name(),
            replicate: r,
            mspe: metric_mspe(&beta, ds.z_test.values(), &ds.y_test)?,
            ae: metric_ae(&beta, &ds.beta)?,
            gr,
            lambda: outcome.selected_lambda(),
            converged: outcome.solution.converged,
        });
    }
    Ok(rows)
}

/// Runs all replicates (in parallel on the current rayon pool) and
/// aggregates in replicate order. Failed replicates are excluded and listed.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 {
        return Err(TarcoError::Validation("need at least one replicate".into()));
    }
    let results: Vec<Result<Vec<MetricRow>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(mut v) => rows.append(&mut v),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failed.push((r, e.to_string()));
            }
        }
    }
    let summary = cfg
        .methods
        .iter()
        .map(|m| {
            let name = m.name();
            let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.method == name).collect();
            let (mspe_mean, mspe_sd) = mean_sd(&mine.iter().map(|r| r.mspe).collect::<Vec<_>>());
            let (ae_mean, ae_sd) = mean_sd(&mine.iter().map(|r| r.ae).collect::<Vec<_>>());
            let grs: Vec<f64> = mine.iter().filter_map(|r| r.gr).collect();
            let (gr_mean, gr_sd) = if grs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&grs);
                (Some(m), Some(s))
            };
            MethodSummary {
                method: name,
                count: mine.len(),
                mspe_mean,
                mspe_sd,
                ae_mean,
                ae_sd,
                gr_mean,
                gr_sd,
            }
        })
        .collect();
    Ok(BenchReport {
        rows,
        summary,
        failed_replicates: failed,
    })
}
