//! Command-line front end. Every command is a pure function of its inputs,
//! flags and seed; outputs are written to `--out`.
//!
//! Flags can also come from a flat `key = value` file given with
//! `--config`; flags on the command line take precedence. Exit codes are 0
//! on success, 1 on input errors and 2 when a numeric routine did not
//! certify convergence (results are still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::bench::{run_bench, BenchConfig};
use crate::compdata::{
    alr_transform, apply_pseudocount, close_composition, select_reference, CountMatrix,
    LogRatioMatrix, DEFAULT_PSEUDOCOUNT,
};
use crate::correction::{project_pieces, ProjectionOptions};
use crate::cv::{cv_path, kfold_split, prepare_folds, CvResult, DEFAULT_FOLDS};
use crate::error::{Result, TarcoError};
use crate::io;
use crate::mecov::{estimate_sigma_u, working_sigma_u, ErrorCov, Provenance, ReplicateSet};
use crate::pipeline::{method_penalty, Design, Method};
use crate::simulate::{generate, Regime};
use crate::solver::{default_grid, FitResult, PenaltyKind, SolverOptions};
use crate::tree::TaxTree;

#[derive(Debug, Parser)]
#[command(
    name = "tarco",
    version,
    about = "Tree-aggregated log-contrast regression with measurement-error correction",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file with default flag values for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single λ.
    Fit(FitArgs),
    /// Choose λ by K-fold cross-validation and refit on all samples.
    Cv(CvArgs),
    /// Write a synthetic dataset bundle.
    Simulate(SimulateArgs),
    /// Estimate the error covariance from replicate measurements.
    EstimateCov(EstimateCovArgs),
    /// Write the corrected Gram matrix and its PSD projection.
    Project(ProjectArgs),
    /// Monte Carlo comparison of all estimators on a regime.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    /// Unit weights on every node.
    L1,
    /// Node weights |L_k|^alpha.
    Wl1,
    /// Descendant-group penalty.
    Desc,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Count table: sample id column, then one column per tree leaf.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Response table: sample id column and one value column.
    #[arg(long)]
    pub response: Option<PathBuf>,
    /// Newick tree whose leaves are the count columns.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Replicate count table (group id column, then taxa) for estimating the error covariance.
    #[arg(long)]
    pub replicates: Option<PathBuf>,
    /// Known error covariance: square CSV over the non-reference taxa.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Use the working covariance tau^2 (I + 11^T).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Reference taxon (default: inferred from --sigma, else most abundant).
    #[arg(long)]
    pub reference: Option<String>,
    /// Replacement for zero counts.
    #[arg(long, default_value_t = DEFAULT_PSEUDOCOUNT)]
    pub pseudocount: f64,
    /// Penalty variant.
    #[arg(long, value_enum, default_value_t = PenaltyArg::Wl1)]
    pub penalty: PenaltyArg,
    /// Exponent of the weighted penalty.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Penalty level.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated strictly descending λ values (default: 50 log-spaced values down to 1e-3 λ_max).
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Number of folds.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub kfolds: usize,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Regime: p100n100, p200n100, p100n500 or misspec.
    #[arg(long, default_value = "p100n100")]
    pub regime: String,
    /// Dataset seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Error scale of the working covariance.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EstimateCovArgs {
    /// Replicate count table: group id column, then taxa.
    #[arg(long)]
    pub replicates: Option<PathBuf>,
    /// Optional Newick tree fixing the taxon order.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Reference taxon (default: most abundant).
    #[arg(long)]
    pub reference: Option<String>,
    /// Replacement for zero counts.
    #[arg(long, default_value_t = DEFAULT_PSEUDOCOUNT)]
    pub pseudocount: f64,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Regime: p100n100, p200n100, p100n500 or misspec.
    #[arg(long, default_value = "p100n100")]
    pub regime: String,
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Folds for the per-method cross-validation.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub kfolds: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::NotConverged => 2,
        }
    }

    fn from_flag(ok: bool) -> Self {
        if ok {
            Self::Ok
        } else {
            Self::NotConverged
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(path: &Path, text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| TarcoError::Input {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected key = value, found '{line}'"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn subcommand_position(args: &[OsString]) -> Option<usize> {
    let names: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let mut skip = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if skip {
            skip = false;
            continue;
        }
        if s == "--threads" || s == "--config" {
            skip = true;
            continue;
        }
        if names.iter().any(|n| *n == s) {
            return Some(i);
        }
    }
    None
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Inserts the config-file flags right after the subcommand, so that flags
/// given on the command line override them.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(pos) = subcommand_position(&args) else {
        return Ok(args);
    };
    let sub_name = args[pos].to_string_lossy().to_string();
    let cmd = Cli::command();
    let sub = cmd
        .find_subcommand(&sub_name)
        .expect("subcommand located above");
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| l != "config" && l != "help")
        .collect();
    let text = io::read_text(&path)?;
    let mut injected = Vec::new();
    for (line, key, value) in parse_config(&path, &text)? {
        let key = key.replace('_', "-");
        if !known.contains(&key) {
            return Err(TarcoError::Input {
                path: path.clone(),
                line,
                message: format!("unknown key '{key}' for command '{sub_name}'"),
            });
        }
        injected.push(OsString::from(format!("--{key}={value}")));
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| TarcoError::Validation(format!("missing required flag --{flag}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TarcoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_text(path, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn read_counts(path: &Path) -> Result<CountMatrix> {
    let t = io::read_table(path)?;
    CountMatrix::new(t.values, t.row_ids, t.columns).map_err(|e| match e {
        TarcoError::Domain { row, col, message } => TarcoError::Input {
            path: path.to_path_buf(),
            line: row + 1,
            message: format!("column {col}: {message}"),
        },
        other => other,
    })
}

fn leaf_position(labels: &[String], name: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == name)
        .ok_or_else(|| TarcoError::Validation(format!("reference taxon '{name}' not found")))
}

fn reduced_labels(labels: &[String], reference: usize) -> Vec<String> {
    labels
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != reference)
        .map(|(_, l)| l.clone())
        .collect()
}

/// Reads a square Σ_U file and reorders it to the non-reference leaves.
/// Returns the reference leaf, i.e. the one leaf the file leaves out.
fn read_sigma(path: &Path, leaves: &[String], reference: Option<usize>) -> Result<ErrorCov> {
    let (labels, m) = io::read_square(path)?;
    let missing: Vec<usize> = (0..leaves.len())
        .filter(|&j| !labels.contains(&leaves[j]))
        .collect();
    if labels.len() + 1 != leaves.len() || missing.len() != 1 {
        return Err(TarcoError::Input {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected the {} taxa other than the reference, found {} matching labels",
                leaves.len() - 1,
                leaves.len() - missing.len()
            ),
        });
    }
    let reference_in_file = missing[0];
    if let Some(r) = reference.filter(|&r| r != reference_in_file) {
        return Err(TarcoError::Validation(format!(
            "--reference is '{}' but {} leaves out '{}'",
            leaves[r],
            path.display(),
            leaves[reference_in_file]
        )));
    }
    let order: Vec<usize> = reduced_labels(leaves, reference_in_file)
        .iter()
        .map(|l| labels.iter().position(|x| x == l).expect("label present"))
        .collect();
    let d = order.len();
    let sigma = DMatrix::from_fn(d, d, |i, j| m[(order[i], order[j])]);
    ErrorCov::new(sigma, reference_in_file, Provenance::Known)
}

fn replicate_set(
    path: &Path,
    leaves: Option<&[String]>,
    reference: Option<&str>,
    pseudocount: f64,
) -> Result<(Vec<String>, ReplicateSet)> {
    let (taxa, groups) = io::read_replicates(path)?;
    let order: Vec<String> = leaves.map(<[String]>::to_vec).unwrap_or(taxa.clone());
    let mut all_rows = Vec::new();
    let mut sizes = Vec::new();
    for (_, g) in &groups {
        sizes.push(g.nrows());
        all_rows.extend(g.row_iter().map(|r| r.into_owned()));
    }
    let stacked = DMatrix::from_rows(&all_rows);
    let ids: Vec<String> = groups
        .iter()
        .flat_map(|(g, m)| std::iter::repeat_n(g.clone(), m.nrows()))
        .collect();
    let counts = CountMatrix::new(stacked, ids, taxa)?.align_taxa(&order)?;
    let comp = close_composition(&apply_pseudocount(&counts, pseudocount)?)?;
    let r = match reference {
        Some(name) => leaf_position(&order, name)?,
        None => select_reference(&comp),
    };
    let z = alr_transform(&comp, r)?.reduced();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        out.push(z.rows(start, s).into_owned());
        start += s;
    }
    Ok((order, ReplicateSet::new(out, r)?))
}

/// Inputs of the fitting commands after validation and alignment.
struct Loaded {
    tree: TaxTree,
    z_tilde: LogRatioMatrix,
    y: DVector<f64>,
    sigma: ErrorCov,
}

fn load(data: &DataArgs) -> Result<Loaded> {
    let counts_path = required(&data.counts, "counts")?;
    let response_path = required(&data.response, "response")?;
    let tree_path = required(&data.tree, "tree")?;
    let sources = [
        data.sigma.is_some(),
        data.replicates.is_some(),
        data.tau.is_some(),
    ];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(TarcoError::Validation(
            "give exactly one of --sigma, --replicates or --tau".into(),
        ));
    }
    required(&data.out, "out")?;

    let tree = TaxTree::parse_newick(io::read_text(tree_path)?.trim())?;
    let leaves = tree.leaf_labels().to_vec();
    let counts = read_counts(counts_path)?.align_taxa(&leaves)?;
    let (resp_ids, resp) = io::read_response(response_path)?;
    let mut y = DVector::zeros(counts.sample_ids().len());
    for (i, id) in counts.sample_ids().iter().enumerate() {
        let k = resp_ids
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| TarcoError::Input {
                path: response_path.clone(),
                line: 1,
                message: format!("no response for sample '{id}'"),
            })?;
        y[i] = resp[k];
    }
    if resp_ids.len() != counts.sample_ids().len() {
        return Err(TarcoError::Input {
            path: response_path.clone(),
            line: 1,
            message: format!(
                "{} responses for {} samples",
                resp_ids.len(),
                counts.sample_ids().len()
            ),
        });
    }
    let comp = close_composition(&apply_pseudocount(&counts, data.pseudocount)?)?;
    let given = data
        .reference
        .as_deref()
        .map(|r| leaf_position(&leaves, r))
        .transpose()?;
    let sigma = if let Some(path) = &data.sigma {
        read_sigma(path, &leaves, given)?
    } else {
        let r = given.unwrap_or_else(|| select_reference(&comp));
        if let Some(path) = &data.replicates {
            let (_, reps) = replicate_set(path, Some(&leaves), Some(&leaves[r]), data.pseudocount)?;
            estimate_sigma_u(&reps)?
        } else {
            working_sigma_u(leaves.len(), data.tau.expect("checked above"), r)?
        }
    };
    let z_tilde = alr_transform(&comp, sigma.reference())?;
    Ok(Loaded {
        tree,
        z_tilde,
        y,
        sigma,
    })
}

fn method(data: &DataArgs) -> Method {
    Method::Tarco(match data.penalty {
        PenaltyArg::L1 => PenaltyKind::Flat,
        PenaltyArg::Wl1 => PenaltyKind::WeightedL1 { alpha: data.alpha },
        PenaltyArg::Desc => PenaltyKind::Descendant,
    })
}

fn write_fit(out: &Path, fit: &FitResult) -> Result<()> {
    write_json(&out.join("fit.json"), fit)?;
    io::write_text(&out.join("gamma.csv"), &fit.gamma_csv())?;
    io::write_text(&out.join("beta.csv"), &fit.beta_csv())
}

fn cmd_fit(args: &FitArgs) -> Result<Status> {
    let lambda = *required(&args.lambda, "lambda")?;
    let d = load(&args.data)?;
    let out = required(&args.data.out, "out")?;
    let agg = d.tree.aggregation();
    let m = method(&args.data);
    let spec = method_penalty(m, &d.tree, d.tree.n_nodes());
    let design = Design::for_method(m, &d.z_tilde, &d.y, &agg, &d.sigma)?;
    let (problem, report) = design.problem(None, &ProjectionOptions::default())?;
    let sol = problem.solve(
        &spec.weight_vector(),
        lambda,
        None,
        &SolverOptions::default(),
    )?;
    create_dir(out)?;
    let fit = FitResult::from_tree(&m.name(), &sol, &spec, &d.tree, &agg)?;
    write_fit(out, &fit)?;
    write_json(&out.join("projection.json"), &report)?;
    if sol.unbounded {
        log::warn!("the objective is unbounded below at lambda={lambda:e}; increase lambda");
    }
    Ok(Status::from_flag(
        sol.converged && report.as_ref().is_none_or(|r| r.converged),
    ))
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| TarcoError::Validation(format!("bad lambda grid value '{s}'")))
        })
        .collect()
}

fn cmd_cv(args: &CvArgs) -> Result<Status> {
    let d = load(&args.data)?;
    let out = required(&args.data.out, "out")?;
    let agg = d.tree.aggregation();
    let m = method(&args.data);
    let spec = method_penalty(m, &d.tree, d.tree.n_nodes());
    let weights = spec.weight_vector();
    let design = Design::for_method(m, &d.z_tilde, &d.y, &agg, &d.sigma)?;
    let plan = kfold_split(design.nrows(), args.kfolds, args.seed)?;
    let prepared = prepare_folds(&design, &plan, &ProjectionOptions::default())?;
    let grid = match &args.lambda_grid {
        Some(g) => parse_grid(g)?,
        None => {
            let lmax = prepared.full.lambda_max(&weights);
            if !(lmax > 0.0) {
                return Err(TarcoError::Validation(
                    "lambda_max is zero; the response carries no signal".into(),
                ));
            }
            default_grid(lmax, 50, 1e-3)
        }
    };
    let outcome = cv_path(&prepared, &weights, &grid, &SolverOptions::default())?;
    let fit = FitResult::from_tree(&m.name(), &outcome.solution, &spec, &d.tree, &agg)?;
    let result = CvResult {
        k: plan.k,
        seed: plan.seed,
        curve: outcome.curve.clone(),
        selected_lambda: outcome.selected_lambda(),
        fit,
    };
    create_dir(out)?;
    io::write_text(&out.join("cv.json"), &format!("{}\n", result.to_json()?))?;
    io::write_text(&out.join("cv_curve.csv"), &result.curve_csv())?;
    write_fit(out, &result.fit)?;
    write_json(&out.join("projection.json"), &prepared.reports)?;
    Ok(Status::from_flag(
        outcome.solution.converged && prepared.reports.iter().all(|r| r.converged),
    ))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Status> {
    let out = required(&args.out, "out")?;
    let regime: Regime = args.regime.parse()?;
    let mut cfg = regime.config(args.seed);
    if let Some(t) = args.tau {
        cfg.tau = t;
    }
    generate(&cfg)?.write_bundle(out)?;
    Ok(Status::Ok)
}

fn cmd_estimate_cov(args: &EstimateCovArgs) -> Result<Status> {
    let path = required(&args.replicates, "replicates")?;
    let out = required(&args.out, "out")?;
    let leaves = match &args.tree {
        Some(t) => Some(
            TaxTree::parse_newick(io::read_text(t)?.trim())?
                .leaf_labels()
                .to_vec(),
        ),
        None => None,
    };
    let (order, reps) = replicate_set(
        path,
        leaves.as_deref(),
        args.reference.as_deref(),
        args.pseudocount,
    )?;
    let sigma = estimate_sigma_u(&reps)?;
    let labels = reduced_labels(&order, sigma.reference());
    create_dir(out)?;
    io::write_table(
        &out.join("sigma_u.csv"),
        "taxon",
        &labels,
        &labels,
        sigma.matrix(),
    )?;
    Ok(Status::Ok)
}

fn cmd_project(args: &ProjectArgs) -> Result<Status> {
    let d = load(&args.data)?;
    let out = required(&args.data.out, "out")?;
    let agg = d.tree.aggregation();
    let design = Design::tarco(&d.z_tilde, &d.y, &agg, &d.sigma)?;
    let corrected = design.quadratic(None)?;
    let (projected, report) = project_pieces(
        &corrected,
        &design.proj_weights,
        &ProjectionOptions::default(),
    )?;
    let labels = d.tree.labels();
    create_dir(out)?;
    io::write_table(
        &out.join("gram_corrected.csv"),
        "node",
        labels,
        labels,
        &corrected.gram,
    )?;
    io::write_table(
        &out.join("gram_projected.csv"),
        "node",
        labels,
        labels,
        &projected.gram,
    )?;
    io::write_text(
        &out.join("cross.csv"),
        &io::vector_csv("node", "value", labels, &corrected.cross),
    )?;
    write_json(&out.join("projection.json"), &report)?;
    Ok(Status::from_flag(report.converged))
}

fn cmd_bench(args: &BenchArgs) -> Result<Status> {
    let out = required(&args.out, "out")?;
    let regime: Regime = args.regime.parse()?;
    let mut cfg = BenchConfig::new(regime.config(args.seed), args.reps);
    cfg.kfolds = args.kfolds;
    let report = run_bench(&cfg)?;
    create_dir(out)?;
    io::write_text(&out.join("metrics.csv"), &report.rows_csv(cfg.with_gr))?;
    io::write_text(&out.join("summary.csv"), &report.summary_csv(cfg.with_gr))?;
    write_json(&out.join("bench.json"), &report)?;
    if !report.failed_replicates.is_empty() {
        log::warn!(
            "{} of {} replicates failed and were excluded",
            report.failed_replicates.len(),
            args.reps
        );
    }
    Ok(Status::Ok)
}

/// Runs a parsed command on a thread pool of the requested size.
pub fn run(cli: &Cli) -> Result<Status> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(TarcoError::Validation("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| TarcoError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::EstimateCov(a) => cmd_estimate_cov(a),
        Command::Project(a) => cmd_project(a),
        Command::Bench(a) => cmd_bench(a),
    })
}

/// Full entry point: parse, run, report. Returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_args(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(status) => {
            if status == Status::NotConverged {
                eprintln!(
                    "warning: a numeric routine did not certify convergence; results were written"
                );
            }
            status.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
