//! Run configuration: flat `key = value` text with `#` comments.
//!
//! Settings are layered: defaults, then a config file, then command-line
//! overrides. Unknown keys are errors. [`RunConfig::to_text`] writes every
//! key, so its output read back reproduces the configuration exactly.

use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::eval::{CvOptions, TrainOptions};
use crate::selection::Budget;
use crate::solver::HyperParams;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub hyper: HyperParams,
    /// Subtract column means from `X` before fitting.
    pub center: bool,
    pub feature_budget: Budget,
    pub instance_budget: Budget,
    pub feature_fracs: Vec<f64>,
    pub instance_fracs: Vec<f64>,
    pub cv_folds: usize,
    pub cv_repeats: usize,
    pub svm_c: f64,
    pub svm_iters: usize,
    pub svm_batch: usize,
    pub embed_dim: usize,
    pub x: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub outliers: Option<PathBuf>,
    pub p: Option<PathBuf>,
    pub q: Option<PathBuf>,
}

fn tenths() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            hyper: HyperParams::default(),
            center: true,
            feature_budget: Budget::Fraction(0.1),
            instance_budget: Budget::Fraction(0.1),
            feature_fracs: tenths(),
            instance_fracs: tenths(),
            cv_folds: 5,
            cv_repeats: 10,
            svm_c: 1.0,
            svm_iters: 2000,
            svm_batch: 32,
            embed_dim: 2,
            x: None,
            edges: None,
            labels: None,
            gt: None,
            outliers: None,
            p: None,
            q: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(format!("bad value '{v}' for {key}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(invalid(format!("bad value '{v}' for {key}: expected true or false"))),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|t| num(key, t.trim())).collect()
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_budget(b: Budget) -> String {
    match b {
        Budget::Count(c) => c.to_string(),
        Budget::Fraction(f) => format!("{f:?}"),
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_list(v: &[f64]) -> String {
    v.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "m" => self.synth.m = num(key, v)?,
            "tau" => self.synth.tau = num(key, v)?,
            "n" => self.synth.n = num(key, v)?,
            "gt_size" => self.synth.gt_size = num(key, v)?,
            "noise_sigma" => self.synth.noise_sigma = num(key, v)?,
            "n_outliers" => self.synth.n_outliers = num(key, v)?,
            "swap_noise_means" => self.synth.swap_noise_means = boolean(key, v)?,
            "lambda1" => self.hyper.lambda1 = num(key, v)?,
            "lambda2" => self.hyper.lambda2 = num(key, v)?,
            "lambda3" => self.hyper.lambda3 = num(key, v)?,
            "k" => self.hyper.k = num(key, v)?,
            "tol_outer" => self.hyper.tol_outer = num(key, v)?,
            "tol_inner" => self.hyper.tol_inner = num(key, v)?,
            "max_outer" => self.hyper.max_outer = num(key, v)?,
            "max_inner" => self.hyper.max_inner = num(key, v)?,
            "ridge_eps" => self.hyper.ridge_eps = num(key, v)?,
            "center" => self.center = boolean(key, v)?,
            "feature_budget" => self.feature_budget = v.parse()?,
            "instance_budget" => self.instance_budget = v.parse()?,
            "feature_fracs" => self.feature_fracs = list(key, v)?,
            "instance_fracs" => self.instance_fracs = list(key, v)?,
            "cv_folds" => self.cv_folds = num(key, v)?,
            "cv_repeats" => self.cv_repeats = num(key, v)?,
            "svm_c" => self.svm_c = num(key, v)?,
            "svm_iters" => self.svm_iters = num(key, v)?,
            "svm_batch" => self.svm_batch = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "x" => self.x = path(v),
            "edges" => self.edges = path(v),
            "labels" => self.labels = path(v),
            "gt" => self.gt = path(v),
            "outliers" => self.outliers = path(v),
            "p" => self.p = path(v),
            "q" => self.q = path(v),
            _ => return Err(invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, h) = (&self.synth, &self.hyper);
        vec![
            ("seed", self.seed.to_string()),
            ("m", s.m.to_string()),
            ("tau", format!("{:?}", s.tau)),
            ("n", s.n.to_string()),
            ("gt_size", s.gt_size.to_string()),
            ("noise_sigma", format!("{:?}", s.noise_sigma)),
            ("n_outliers", s.n_outliers.to_string()),
            ("swap_noise_means", s.swap_noise_means.to_string()),
            ("lambda1", format!("{:?}", h.lambda1)),
            ("lambda2", format!("{:?}", h.lambda2)),
            ("lambda3", format!("{:?}", h.lambda3)),
            ("k", h.k.to_string()),
            ("tol_outer", format!("{:?}", h.tol_outer)),
            ("tol_inner", format!("{:?}", h.tol_inner)),
            ("max_outer", h.max_outer.to_string()),
            ("max_inner", h.max_inner.to_string()),
            ("ridge_eps", format!("{:?}", h.ridge_eps)),
            ("center", self.center.to_string()),
            ("feature_budget", show_budget(self.feature_budget)),
            ("instance_budget", show_budget(self.instance_budget)),
            ("feature_fracs", show_list(&self.feature_fracs)),
            ("instance_fracs", show_list(&self.instance_fracs)),
            ("cv_folds", self.cv_folds.to_string()),
            ("cv_repeats", self.cv_repeats.to_string()),
            ("svm_c", format!("{:?}", self.svm_c)),
            ("svm_iters", self.svm_iters.to_string()),
            ("svm_batch", self.svm_batch.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("x", show_path(&self.x)),
            ("edges", show_path(&self.edges)),
            ("labels", show_path(&self.labels)),
            ("gt", show_path(&self.gt)),
            ("outliers", show_path(&self.outliers)),
            ("p", show_path(&self.p)),
            ("q", show_path(&self.q)),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines on top of the current values. Errors carry
    /// `origin` and the line number.
    pub fn apply_text(&mut self, origin: &str, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| Error::Parse { path: origin.to_string(), line: i + 1, msg: e.to_string() };
            let (k, v) = line.split_once('=').ok_or_else(|| at(invalid(format!("expected key = value, got '{line}'"))))?;
            self.set(k.trim(), v).map_err(at)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = crate::io::read_text(path)?;
        self.apply_text(&path.display().to_string(), &text)
    }

    /// Solver settings with the shared seed.
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams { seed: self.seed, ..self.hyper }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.seed, ..self.synth.clone() }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            folds: self.cv_folds,
            repeats: self.cv_repeats,
            seed: self.seed,
            train: TrainOptions { c: self.svm_c, iters: self.svm_iters, batch: self.svm_batch, seed: self.seed },
        }
    }
}
