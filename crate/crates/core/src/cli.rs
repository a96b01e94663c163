//! Command-line front end. Every command reads plain-text inputs, writes its
//! outputs atomically into `--out`, and leaves a `<command>.manifest` there.
//! The manifest is a complete config file: passing it back via `--config`
//! repeats the run exactly.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::eval::{cv_accuracy, roc_auc, sweep_grid, RocCurve};
use crate::graph::NetworkStructure;
use crate::io::{self, write_atomic};
use crate::numerics::{center_columns, Matrix};
use crate::selection::{embed, feature_scores, instance_scores, outlier_scores, select_top, summarize, Budget};
use crate::solver::fit;
use crate::synth::generate;

#[derive(Debug, Parser)]
#[command(name = "uiss", version, about = "Joint feature and instance selection for network-structured data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory written by `synth` (x.txt, edges.txt, labels.txt, gt_nodes.txt, outliers.txt).
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Directory written by `fit` (p.txt, q.txt).
    #[arg(long, global = true, value_name = "DIR")]
    pub fit: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub x: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub edges: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub gt: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub outliers: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub p: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub q: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark dataset.
    Synth,
    /// Learn the feature selector P and instance selector Q.
    Fit,
    /// Score and select features and instances from a fit.
    Rank,
    /// Evaluate a fit.
    Eval {
        #[arg(value_enum)]
        mode: EvalMode,
    },
    /// PCA coordinates of the learned projection XP.
    Embed {
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Accuracy vs. number of selected features, and ROC against the ground truth.
    Features,
    /// Accuracy of top-ranked vs. random instances.
    Instances,
    /// ROC of outlier scores against the outlier flags.
    Outliers,
    /// Accuracy over the feature × instance fraction grid.
    Grid,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Fit => "fit",
            Command::Rank => "rank",
            Command::Eval { .. } => "eval",
            Command::Embed { .. } => "embed",
        }
    }
}

/// Defaults, then `--config`, then the flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(dir) = &common.data {
        for (key, file) in
            [("x", "x.txt"), ("edges", "edges.txt"), ("labels", "labels.txt"), ("gt", "gt_nodes.txt"), ("outliers", "outliers.txt")]
        {
            cfg.set(key, &dir.join(file).display().to_string())?;
        }
    }
    if let Some(dir) = &common.fit {
        cfg.p = Some(dir.join("p.txt"));
        cfg.q = Some(dir.join("q.txt"));
    }
    let explicit = [
        (&common.x, &mut cfg.x),
        (&common.edges, &mut cfg.edges),
        (&common.labels, &mut cfg.labels),
        (&common.gt, &mut cfg.gt),
        (&common.outliers, &mut cfg.outliers),
        (&common.p, &mut cfg.p),
        (&common.q, &mut cfg.q),
    ];
    for (flag, slot) in explicit {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn need<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| invalid(format!("missing input '{key}' (set it with --{key}, --data/--fit, or the config)")))
}

fn read_network(cfg: &RunConfig, node_count: usize) -> Result<NetworkStructure> {
    NetworkStructure::new(node_count, &io::read_edges(need(&cfg.edges, "edges")?)?)
}

fn read_labels(cfg: &RunConfig, n: usize) -> Result<Vec<Option<bool>>> {
    let labels = io::read_labels(need(&cfg.labels, "labels")?)?;
    if labels.len() != n {
        return Err(invalid(format!("{} labels for {n} instances", labels.len())));
    }
    Ok(labels)
}

fn sci(v: f64) -> String {
    format!("{v:e}")
}

fn roc_table(roc: &RocCurve) -> String {
    let rows: Vec<Vec<String>> = (0..roc.fpr.len())
        .map(|i| vec![sci(roc.thresholds[i]), sci(roc.fpr[i]), sci(roc.tpr[i])])
        .collect();
    io::format_table(&["threshold", "fpr", "tpr"], &rows)
}

/// Files produced by a command, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        write_atomic(&self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Runs a parsed command. Returns the paths written, manifest last.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = resolve_config(&cli.common)?;
    if let Command::Embed { dim: Some(d) } = cli.command {
        cfg.embed_dim = d;
    }
    let mut out = Outputs { dir: cli.common.out.clone(), written: Vec::new() };
    let mut header = format!("# uiss {} {}\n", env!("CARGO_PKG_VERSION"), cli.command.name());
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, &mut out)?,
        Command::Fit => cmd_fit(&cfg, &mut out)?,
        Command::Rank => cmd_rank(&cfg, &mut out)?,
        Command::Eval { mode } => {
            header.push_str(&format!("# mode: {}\n", mode.to_possible_value().expect("no skipped variants").get_name()));
            cmd_eval(&cfg, *mode, &mut out)?
        }
        Command::Embed { .. } => cmd_embed(&cfg, cfg.embed_dim, &mut out)?,
    }
    header.push_str(&format!("# outputs: {}\n", out.written.join(" ")));
    let manifest = format!("{}.manifest", cli.command.name());
    out.put(&manifest, &(header + &cfg.to_text()))?;
    Ok(out.written.iter().map(|f| out.dir.join(f)).collect())
}

fn cmd_synth(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let ds = generate(&cfg.synth_config())?;
    out.put("x.txt", &io::format_matrix(&ds.x))?;
    out.put("edges.txt", &io::format_edges(ds.net.node_count(), ds.net.edges()))?;
    out.put("labels.txt", &io::format_labels(&ds.labels))?;
    out.put("gt_nodes.txt", &io::format_indices(&ds.gt_nodes))?;
    out.put("outliers.txt", &io::format_flags(&ds.outlier_flags))
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let x = io::read_matrix(need(&cfg.x, "x")?)?;
    let net = read_network(cfg, x.ncols())?;
    let x = if cfg.center { center_columns(&x).0 } else { x };
    let result = fit(&x, &net.laplacian(), &cfg.hyper_params())?;
    let r = &result.report;
    out.put("p.txt", &io::format_matrix(result.p()))?;
    out.put("q.txt", &io::format_matrix(result.q()))?;
    let report = format!(
        "converged = {}\nouter_iters = {}\ninitial_objective = {:e}\nfinal_objective = {:e}\nfinal_delta_p = {:e}\nfinal_delta_q = {:e}\ninner_nonconverged = {}\nreseeds = {}\n",
        r.converged,
        r.outer_iters,
        r.initial_objective,
        r.objective_trace.last().copied().unwrap_or(r.initial_objective),
        r.final_delta_p,
        r.final_delta_q,
        r.inner_nonconverged,
        r.reseeds,
    );
    out.put("report.txt", &report)?;
    let mut rows = vec![vec!["0".to_string(), sci(r.initial_objective), "0".to_string()]];
    rows.extend(
        r.objective_trace
            .iter()
            .zip(&r.inner_iters)
            .enumerate()
            .map(|(i, (o, inner))| vec![(i + 1).to_string(), sci(*o), inner.to_string()]),
    );
    out.put("objective.tsv", &io::format_table(&["iter", "objective", "inner_iters"], &rows))
}

fn read_fit(cfg: &RunConfig) -> Result<(Matrix, Matrix)> {
    let p = io::read_matrix(need(&cfg.p, "p")?)?;
    let q = io::read_matrix(need(&cfg.q, "q")?)?;
    if p.ncols() != q.nrows() {
        return Err(invalid(format!("P is {}x{} but Q is {}x{}", p.nrows(), p.ncols(), q.nrows(), q.ncols())));
    }
    Ok((p, q))
}

fn cmd_rank(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (p, q) = read_fit(cfg)?;
    let net = read_network(cfg, p.nrows())?;
    let s = summarize(&p, &q, &net, cfg.feature_budget, cfg.instance_budget)?;
    let rows: Vec<Vec<String>> = s.feature_scores.iter().enumerate().map(|(i, v)| vec![i.to_string(), sci(*v)]).collect();
    out.put("feature_scores.tsv", &io::format_table(&["feature", "score"], &rows))?;
    let rows: Vec<Vec<String>> = (0..s.instance_scores.len())
        .map(|i| vec![i.to_string(), sci(s.instance_scores[i]), sci(s.outlier_scores[i])])
        .collect();
    out.put("instance_scores.tsv", &io::format_table(&["instance", "score", "outlier_score"], &rows))?;
    out.put("selected_features.txt", &io::format_indices(&s.selected_features))?;
    out.put("selected_instances.txt", &io::format_indices(&s.selected_instances))?;
    let comps: String = s
        .components
        .iter()
        .map(|c| c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    out.put("components.txt", &comps)
}

/// `count` instances drawn uniformly without replacement.
pub fn random_instances(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5e1ec7);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(count);
    idx
}

fn cmd_eval(cfg: &RunConfig, mode: EvalMode, out: &mut Outputs) -> Result<()> {
    match mode {
        EvalMode::Features => {
            let x = io::read_matrix(need(&cfg.x, "x")?)?;
            let labels = read_labels(cfg, x.nrows())?;
            let p = io::read_matrix(need(&cfg.p, "p")?)?;
            if p.nrows() != x.ncols() {
                return Err(invalid(format!("P has {} rows for {} features", p.nrows(), x.ncols())));
            }
            let scores = feature_scores(&p);
            let all: Vec<usize> = (0..x.nrows()).collect();
            let opts = cfg.cv_options();
            let mut rows = Vec::new();
            for &f in &cfg.feature_fracs {
                let feats = select_top(&scores, Budget::Fraction(f))?;
                let r = cv_accuracy(&x, &labels, &feats, &all, &opts)?;
                rows.push(vec![format!("{f:?}"), feats.len().to_string(), sci(r.mean), sci(r.std)]);
            }
            out.put("eval_features.tsv", &io::format_table(&["fraction", "count", "accuracy", "std"], &rows))?;
            if let Some(gt) = &cfg.gt {
                let gt = io::read_indices(gt)?;
                let mut positive = vec![false; scores.len()];
                for g in gt {
                    *positive.get_mut(g).ok_or_else(|| invalid(format!("ground-truth node {g} out of range")))? = true;
                }
                let roc = roc_auc(&scores, &positive)?;
                out.put("feature_roc.tsv", &roc_table(&roc))?;
                out.put("feature_auc.txt", &format!("{:e}\n", roc.auc))?;
            }
            Ok(())
        }
        EvalMode::Instances => {
            let x = io::read_matrix(need(&cfg.x, "x")?)?;
            let labels = read_labels(cfg, x.nrows())?;
            let q = io::read_matrix(need(&cfg.q, "q")?)?;
            if q.ncols() != x.nrows() {
                return Err(invalid(format!("Q has {} columns for {} instances", q.ncols(), x.nrows())));
            }
            let scores = instance_scores(&q);
            let feats: Vec<usize> = (0..x.ncols()).collect();
            let opts = cfg.cv_options();
            let mut rows = Vec::new();
            for &f in &cfg.instance_fracs {
                let top = select_top(&scores, Budget::Fraction(f))?;
                let rand = random_instances(x.nrows(), top.len(), cfg.seed);
                let a = cv_accuracy(&x, &labels, &feats, &top, &opts)?;
                let b = cv_accuracy(&x, &labels, &feats, &rand, &opts)?;
                rows.push(vec![format!("{f:?}"), top.len().to_string(), sci(a.mean), sci(a.std), sci(b.mean), sci(b.std)]);
            }
            let header = ["fraction", "count", "accuracy", "std", "random_accuracy", "random_std"];
            out.put("eval_instances.tsv", &io::format_table(&header, &rows))
        }
        EvalMode::Outliers => {
            let q = io::read_matrix(need(&cfg.q, "q")?)?;
            let flags = io::read_flags(need(&cfg.outliers, "outliers")?)?;
            if flags.len() != q.ncols() {
                return Err(invalid(format!("{} outlier flags for {} instances", flags.len(), q.ncols())));
            }
            let roc = roc_auc(&outlier_scores(&instance_scores(&q)), &flags)?;
            out.put("outlier_roc.tsv", &roc_table(&roc))?;
            out.put("outlier_auc.txt", &format!("{:e}\n", roc.auc))
        }
        EvalMode::Grid => {
            let x = io::read_matrix(need(&cfg.x, "x")?)?;
            let labels = read_labels(cfg, x.nrows())?;
            let (p, q) = read_fit(cfg)?;
            let grid = sweep_grid(&x, &labels, &p, &q, &cfg.feature_fracs, &cfg.instance_fracs, &cfg.cv_options())?;
            let inst: Vec<String> = cfg.instance_fracs.iter().map(|f| format!("{f:?}")).collect();
            let mut header = vec!["feature_fraction"];
            header.extend(inst.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = cfg
                .feature_fracs
                .iter()
                .enumerate()
                .map(|(r, f)| std::iter::once(format!("{f:?}")).chain(grid.row(r).iter().map(|v| sci(*v))).collect())
                .collect();
            out.put("grid.tsv", &io::format_table(&header, &rows))
        }
    }
}

fn cmd_embed(cfg: &RunConfig, dim: usize, out: &mut Outputs) -> Result<()> {
    let x = io::read_matrix(need(&cfg.x, "x")?)?;
    let p = io::read_matrix(need(&cfg.p, "p")?)?;
    let e = embed(&x, &p, dim)?;
    let header: Vec<String> = std::iter::once("instance".to_string()).chain((1..=dim).map(|i| format!("pc{i}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = e
        .coords
        .row_iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().map(|v| sci(*v))).collect())
        .collect();
    out.put("embedding.tsv", &io::format_table(&header, &rows))?;
    let rows: Vec<Vec<String>> =
        e.variance_ratio.iter().enumerate().map(|(i, v)| vec![format!("pc{}", i + 1), sci(*v)]).collect();
    out.put("variance.tsv", &io::format_table(&["component", "variance_ratio"], &rows))
}
