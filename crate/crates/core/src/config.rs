//! Experiment configuration.
//!
//! Configs are TOML documents. Unknown keys are rejected, every numeric
//! constraint is checked before round 0, and omitted keys take the defaults
//! listed on each field. `[model] kind`, `[data] num_classes`, `[run] rounds`
//! and `[run] seed` are required. See `configs/scaled.toml` at the repository
//! root for an annotated example.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adversary::{LABEL_FLIP_NU, SIGN_FLIP_NU};
use crate::defense::{AggregatorKind, AggregatorSpec, FilterSpec};
use crate::error::{Error, Result};
use crate::model::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub server_data: ServerDataSection,
    #[serde(default)]
    pub clients: ClientSection,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub defense: DefenseSection,
    #[serde(default)]
    pub attack: AttackSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub source: DataSource,
    pub num_classes: usize,
    /// Required for blobs; inferred from the CSV header otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default = "defaults::train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "defaults::test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default = "defaults::num_clients")]
    pub num_clients: usize,
    #[serde(default = "defaults::dirichlet_alpha")]
    pub dirichlet_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerDataSection {
    #[serde(default = "defaults::server_size")]
    pub size: usize,
    #[serde(default = "defaults::mean_shift")]
    pub mean_shift: f64,
    #[serde(default)]
    pub drop_classes: Vec<usize>,
    /// CSV server dataset; required when `data.source = "csv"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for ServerDataSection {
    fn default() -> Self {
        ServerDataSection {
            size: defaults::server_size(),
            mean_shift: defaults::mean_shift(),
            drop_classes: Vec::new(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    #[serde(default = "defaults::sample_size")]
    pub sample_size: usize,
    /// Local epochs; mutually exclusive with `steps`. Defaults to 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "defaults::client_batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            sample_size: defaults::sample_size(),
            epochs: None,
            steps: None,
            batch_size: defaults::client_batch(),
            learning_rate: defaults::learning_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "defaults::server_batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::eta_g")]
    pub eta_g: f64,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            gamma: defaults::gamma(),
            learning_rate: defaults::learning_rate(),
            epochs: None,
            steps: None,
            batch_size: defaults::server_batch(),
            tau: defaults::tau(),
            eta_g: defaults::eta_g(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    #[default]
    None,
    Angle,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSection {
    #[serde(default)]
    pub filter: FilterKind,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    #[serde(default = "defaults::aggregator")]
    pub aggregator: AggregatorKind,
    #[serde(default = "defaults::weiszfeld_max_iters")]
    pub weiszfeld_max_iters: usize,
    #[serde(default = "defaults::weiszfeld_rel_tol")]
    pub weiszfeld_rel_tol: f64,
    #[serde(default = "defaults::weiszfeld_smoothing")]
    pub weiszfeld_smoothing: f64,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            filter: FilterKind::None,
            alpha: defaults::alpha(),
            rho: defaults::rho(),
            theta: defaults::theta(),
            aggregator: defaults::aggregator(),
            weiszfeld_max_iters: defaults::weiszfeld_max_iters(),
            weiszfeld_rel_tol: defaults::weiszfeld_rel_tol(),
            weiszfeld_smoothing: defaults::weiszfeld_smoothing(),
        }
    }
}

impl DefenseSection {
    pub fn filter_spec(&self) -> FilterSpec {
        match self.filter {
            FilterKind::None => FilterSpec::None,
            FilterKind::Angle => FilterSpec::Angle { alpha: self.alpha },
            FilterKind::Loss => FilterSpec::Loss {
                rho: self.rho,
                theta: self.theta,
            },
        }
    }

    pub fn aggregator_spec(&self) -> AggregatorSpec {
        AggregatorSpec {
            kind: self.aggregator,
            weiszfeld_max_iters: self.weiszfeld_max_iters,
            weiszfeld_rel_tol: self.weiszfeld_rel_tol,
            weiszfeld_smoothing: self.weiszfeld_smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "defaults::sign_flip_nu")]
    pub sign_flip_nu: [f64; 2],
    #[serde(default = "defaults::label_flip_nu")]
    pub label_flip_nu: [f64; 2],
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            beta: 0.0,
            sign_flip_nu: SIGN_FLIP_NU,
            label_flip_nu: LABEL_FLIP_NU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    pub seed: u64,
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
    #[serde(default = "defaults::rolling_window")]
    pub rolling_window: usize,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
    /// Also log `Σ_{honest} p_i f_i(x)` each round (full pass over all shards).
    #[serde(default)]
    pub log_honest_objective: bool,
}

mod defaults {
    use crate::defense::AggregatorKind;

    pub fn hidden_dim() -> usize {
        32
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn train_per_class() -> usize {
        1000
    }
    pub fn test_per_class() -> usize {
        200
    }
    pub fn spread() -> f64 {
        1.0
    }
    pub fn num_clients() -> usize {
        50
    }
    pub fn dirichlet_alpha() -> f64 {
        0.3
    }
    pub fn server_size() -> usize {
        100
    }
    pub fn mean_shift() -> f64 {
        1.0
    }
    pub fn sample_size() -> usize {
        20
    }
    pub fn client_batch() -> usize {
        50
    }
    pub fn server_batch() -> usize {
        180
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn gamma() -> f64 {
        0.1
    }
    pub fn tau() -> f64 {
        1.0
    }
    pub fn eta_g() -> f64 {
        1.0
    }
    pub fn alpha() -> f64 {
        0.0
    }
    pub fn rho() -> f64 {
        0.1
    }
    pub fn theta() -> f64 {
        0.5
    }
    pub fn aggregator() -> AggregatorKind {
        AggregatorKind::Geomed
    }
    pub fn weiszfeld_max_iters() -> usize {
        4
    }
    pub fn weiszfeld_rel_tol() -> f64 {
        1e-6
    }
    pub fn weiszfeld_smoothing() -> f64 {
        1e-8
    }
    pub fn sign_flip_nu() -> [f64; 2] {
        crate::adversary::SIGN_FLIP_NU
    }
    pub fn label_flip_nu() -> [f64; 2] {
        crate::adversary::LABEL_FLIP_NU
    }
    pub fn repeats() -> usize {
        3
    }
    pub fn rolling_window() -> usize {
        20
    }
    pub fn eval_every() -> usize {
        1
    }
}

/// Default number of local epochs when neither epochs nor steps is given.
pub const DEFAULT_EPOCHS: usize = 2;

/// Scalars a sweep may vary.
pub const SWEEP_AXES: &[&str] = &[
    "beta",
    "gamma",
    "alpha",
    "rho",
    "theta",
    "tau",
    "alpha_dirichlet",
];

/// Parses, fills defaults and validates a TOML config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    config.fill_defaults();
    config.validate()?;
    Ok(config)
}

fn require(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

fn finite_nonneg(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

impl ExperimentConfig {
    /// A copy with the epoch defaults filled in where neither epochs nor
    /// steps is set.
    pub fn resolve(&self) -> Self {
        let mut c = self.clone();
        c.fill_defaults();
        c
    }

    fn fill_defaults(&mut self) {
        if self.clients.epochs.is_none() && self.clients.steps.is_none() {
            self.clients.epochs = Some(DEFAULT_EPOCHS);
        }
        if self.server.epochs.is_none() && self.server.steps.is_none() {
            self.server.epochs = Some(DEFAULT_EPOCHS);
        }
    }

    /// Serializes the fully resolved config; parsing the output yields an
    /// equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        require(
            m.kind != ModelKind::Mlp || m.hidden_dim >= 1,
            "model.hidden_dim",
            "must be >= 1",
        )?;
        require(
            finite_nonneg(m.weight_decay),
            "model.weight_decay",
            "must be >= 0 and finite",
        )?;

        let d = &self.data;
        require(d.num_classes >= 2, "data.num_classes", "must be >= 2")?;
        match d.source {
            DataSource::Blobs => {
                require(
                    d.input_dim.is_some_and(|m| m >= 2),
                    "data.input_dim",
                    "is required for blobs and must be >= 2",
                )?;
                require(
                    d.train_per_class >= 1,
                    "data.train_per_class",
                    "must be >= 1",
                )?;
                require(d.test_per_class >= 1, "data.test_per_class", "must be >= 1")?;
                require(
                    d.spread > 0.0 && d.spread.is_finite(),
                    "data.spread",
                    "must be > 0",
                )?;
            }
            DataSource::Csv => {
                require(
                    d.train_path.is_some(),
                    "data.train_path",
                    "is required for csv data",
                )?;
                require(
                    d.test_path.is_some(),
                    "data.test_path",
                    "is required for csv data",
                )?;
                require(
                    self.server_data.path.is_some(),
                    "server_data.path",
                    "is required for csv data",
                )?;
            }
        }
        require(d.num_clients >= 1, "data.num_clients", "must be >= 1")?;
        require(
            d.dirichlet_alpha > 0.0 && d.dirichlet_alpha.is_finite(),
            "data.dirichlet_alpha",
            "must be > 0 and finite",
        )?;

        let s = &self.server_data;
        require(s.size >= 1, "server_data.size", "must be >= 1")?;
        require(
            finite_nonneg(s.mean_shift),
            "server_data.mean_shift",
            "must be >= 0 and finite",
        )?;
        require(
            s.drop_classes.iter().all(|&c| c < d.num_classes),
            "server_data.drop_classes",
            "every entry must be a class in [0, num_classes)",
        )?;
        let mut dropped = s.drop_classes.clone();
        dropped.sort_unstable();
        dropped.dedup();
        require(
            dropped.len() < d.num_classes,
            "server_data.drop_classes",
            "cannot drop every class",
        )?;

        let c = &self.clients;
        require(
            (1..=d.num_clients).contains(&c.sample_size),
            "clients.sample_size",
            "must lie in [1, data.num_clients]",
        )?;
        check_epochs_steps("clients", c.epochs, c.steps)?;
        require(c.batch_size >= 1, "clients.batch_size", "must be >= 1")?;
        require(
            finite_nonneg(c.learning_rate),
            "clients.learning_rate",
            "must be >= 0 and finite",
        )?;

        let v = &self.server;
        require(
            finite_nonneg(v.gamma),
            "server.gamma",
            "must be >= 0 and finite",
        )?;
        require(
            finite_nonneg(v.learning_rate),
            "server.learning_rate",
            "must be >= 0 and finite",
        )?;
        check_epochs_steps("server", v.epochs, v.steps)?;
        require(v.batch_size >= 1, "server.batch_size", "must be >= 1")?;
        require(
            v.tau > 0.0 && v.tau.is_finite(),
            "server.tau",
            "must be > 0 and finite",
        )?;
        require(
            v.eta_g > 0.0 && v.eta_g.is_finite(),
            "server.eta_g",
            "must be > 0 and finite",
        )?;

        let f = &self.defense;
        require(
            (0.0..=1.0).contains(&f.alpha),
            "defense.alpha",
            "must lie in [0, 1]",
        )?;
        require(
            finite_nonneg(f.rho),
            "defense.rho",
            "must be >= 0 and finite",
        )?;
        require(
            f.theta > 0.0 && f.theta < 1.0,
            "defense.theta",
            "must lie in (0, 1)",
        )?;
        require(
            f.weiszfeld_max_iters >= 1,
            "defense.weiszfeld_max_iters",
            "must be >= 1",
        )?;
        require(
            f.weiszfeld_rel_tol > 0.0,
            "defense.weiszfeld_rel_tol",
            "must be > 0",
        )?;
        require(
            f.weiszfeld_smoothing > 0.0,
            "defense.weiszfeld_smoothing",
            "must be > 0",
        )?;
        require(
            v.eta_g == 1.0 || (f.filter == FilterKind::None && f.aggregator == AggregatorKind::Average),
            "server.eta_g",
            "values other than 1 require defense.filter = \"none\" and defense.aggregator = \"average\"",
        )?;

        let a = &self.attack;
        require(
            (0.0..1.0).contains(&a.beta),
            "attack.beta",
            "must lie in [0, 1)",
        )?;
        for (key, [lo, hi]) in [
            ("attack.sign_flip_nu", a.sign_flip_nu),
            ("attack.label_flip_nu", a.label_flip_nu),
        ] {
            require(
                lo > 0.0 && lo <= hi && hi.is_finite(),
                key,
                "must be [lo, hi] with 0 < lo <= hi",
            )?;
        }

        let r = &self.run;
        require(r.repeats >= 1, "run.repeats", "must be >= 1")?;
        require(r.rolling_window >= 1, "run.rolling_window", "must be >= 1")?;
        require(
            (1..=r.rolling_window).contains(&r.eval_every),
            "run.eval_every",
            "must lie in [1, run.rolling_window]",
        )?;
        Ok(())
    }

    /// Sets one sweepable scalar and re-validates.
    pub fn set_axis(&mut self, axis: &str, value: f64) -> Result<()> {
        match axis {
            "beta" => self.attack.beta = value,
            "gamma" => self.server.gamma = value,
            "alpha" => self.defense.alpha = value,
            "rho" => self.defense.rho = value,
            "theta" => self.defense.theta = value,
            "tau" => self.server.tau = value,
            "alpha_dirichlet" => self.data.dirichlet_alpha = value,
            _ => {
                return Err(Error::config(
                    "axis",
                    format!(
                        "unknown axis `{axis}`; valid axes: {}",
                        SWEEP_AXES.join(", ")
                    ),
                ))
            }
        }
        self.validate()
    }
}

fn check_epochs_steps(section: &str, epochs: Option<usize>, steps: Option<usize>) -> Result<()> {
    match (epochs, steps) {
        (Some(_), Some(_)) => Err(Error::config(
            format!("{section}.steps"),
            format!("cannot be combined with {section}.epochs"),
        )),
        (Some(0), None) => Err(Error::config(format!("{section}.epochs"), "must be >= 1")),
        (None, Some(0)) => Err(Error::config(format!("{section}.steps"), "must be >= 1")),
        _ => Ok(()),
    }
}
