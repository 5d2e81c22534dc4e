//! Experiment description with a flat key/value configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel_model::ScenarioConfig;
use crate::error::{Error, Result};
use crate::gmm::EmOptions;
use crate::pilot_design::{InitKind, ObjectiveKind, OptimizerOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Su,
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Snr,
    Block,
    Components,
    LMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotScheme {
    Gmm,
    Dft,
    Random,
    Genie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gmm,
    GenieLmmse,
    SampleLmmse,
    Omp,
}

macro_rules! named {
    ($t:ty, $($v:path => $s:literal $(| $alt:literal)*),+ $(,)?) => {
        impl $t {
            pub fn name(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s $(| $alt)* => Ok($v),)+
                    other => Err(Error::Config(format!(
                        "unknown {} `{other}`", stringify!($t)
                    ))),
                }
            }
        }
    };
}

named!(Mode, Mode::Su => "su", Mode::Mu => "mu");
named!(SweepKind,
    SweepKind::Snr => "snr",
    SweepKind::Block => "block",
    SweepKind::Components => "components" | "k",
    SweepKind::LMax => "l_max");
named!(PilotScheme,
    PilotScheme::Gmm => "gmm",
    PilotScheme::Dft => "dft",
    PilotScheme::Random => "random" | "rnd",
    PilotScheme::Genie => "genie");
named!(EstimatorKind,
    EstimatorKind::Gmm => "gmm",
    EstimatorKind::GenieLmmse => "genie_lmmse",
    EstimatorKind::SampleLmmse => "sample_lmmse",
    EstimatorKind::Omp => "omp");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scheme {
    pub pilot: PilotScheme,
    pub estimator: EstimatorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub mode: Mode,
    pub sweep: SweepKind,
    pub sweep_values: Vec<f64>,
    /// Block reported by sweeps other than `block`.
    pub eval_block: usize,
    pub pilots: Vec<PilotScheme>,
    pub estimators: Vec<EstimatorKind>,
    pub n_train: usize,
    pub n_eval: usize,
    pub n_con: usize,
    pub k_tx: usize,
    pub k_rx: usize,
    pub em: EmOptions,
    pub optimizer: OptimizerOptions,
    pub omp_oversampling: usize,
    pub bootstrap_resamples: usize,
    pub record_wall_time: bool,
    /// Rerun the optimizer for every terminal and require bit-identical pilots.
    pub verify_common_knowledge: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            mode: Mode::Su,
            sweep: SweepKind::Snr,
            sweep_values: vec![0.0, 10.0, 20.0],
            eval_block: 5,
            pilots: vec![PilotScheme::Gmm, PilotScheme::Dft, PilotScheme::Random, PilotScheme::Genie],
            estimators: vec![EstimatorKind::Gmm, EstimatorKind::GenieLmmse],
            n_train: 20_000,
            n_eval: 2_000,
            n_con: 100,
            k_tx: 16,
            k_rx: 4,
            em: EmOptions::default(),
            optimizer: OptimizerOptions::default(),
            omp_oversampling: 2,
            bootstrap_resamples: 1000,
            record_wall_time: true,
            verify_common_knowledge: true,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse `{v}` for `{key}` as a boolean"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| s.trim().trim_matches('"'))
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_enum_list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| s.trim().trim_matches('"'))
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect()
}

impl ExperimentSpec {
    /// Every configuration key, in the order used by [`ExperimentSpec::to_toml`].
    pub const KEYS: &'static [&'static str] = &[
        "n_tx", "n_rx", "n_pilots", "n_users", "snr_db", "rho", "n_blocks", "seed",
        "spread_tx_deg", "spread_rx_deg", "quad_points", "n_clusters", "mode", "sweep",
        "sweep_values", "eval_block", "pilots", "estimators", "n_train", "n_eval", "n_con",
        "k_tx", "k_rx", "em_max_iters", "em_tol", "objective", "l_max", "epsilon", "init",
        "init_seed", "dft_oversampling", "dft_random_columns", "omp_oversampling",
        "bootstrap_resamples", "record_wall_time", "verify_common_knowledge", "output",
    ];

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scenario;
        match key.trim().replace('-', "_").as_str() {
            "n_tx" => s.n_tx = parse(key, v)?,
            "n_rx" => s.n_rx = parse(key, v)?,
            "n_pilots" => s.n_pilots = parse(key, v)?,
            "n_users" => s.n_users = parse(key, v)?,
            "snr_db" => s.snr_db = parse(key, v)?,
            "rho" => s.rho = parse(key, v)?,
            "n_blocks" => s.n_blocks = parse(key, v)?,
            "seed" => s.seed = parse(key, v)?,
            "spread_tx_deg" => s.spread_tx_deg = parse(key, v)?,
            "spread_rx_deg" => s.spread_rx_deg = parse(key, v)?,
            "quad_points" => s.quad_points = parse(key, v)?,
            "n_clusters" => s.n_clusters = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "sweep" => self.sweep = v.parse()?,
            "sweep_values" => self.sweep_values = parse_list(key, v)?,
            "eval_block" => self.eval_block = parse(key, v)?,
            "pilots" => self.pilots = parse_enum_list(v)?,
            "estimators" => self.estimators = parse_enum_list(v)?,
            "n_train" => self.n_train = parse(key, v)?,
            "n_eval" => self.n_eval = parse(key, v)?,
            "n_con" => self.n_con = parse(key, v)?,
            "k_tx" => self.k_tx = parse(key, v)?,
            "k_rx" => self.k_rx = parse(key, v)?,
            "em_max_iters" => self.em.max_iters = parse(key, v)?,
            "em_tol" => self.em.tol = parse(key, v)?,
            "objective" => {
                self.optimizer.objective_kind = match v.trim() {
                    "full" | "full_cmi" => ObjectiveKind::FullCmi,
                    "lower_bound" | "lb" => ObjectiveKind::LowerBound,
                    o => return Err(Error::Config(format!("unknown objective `{o}`"))),
                }
            }
            "l_max" => self.optimizer.l_max = parse(key, v)?,
            "epsilon" => self.optimizer.epsilon = parse(key, v)?,
            "init" => {
                self.optimizer.init_kind = match v.trim() {
                    "dft" => InitKind::Dft,
                    "random" => InitKind::Random,
                    o => return Err(Error::Config(format!("unknown init `{o}`"))),
                }
            }
            "init_seed" => self.optimizer.init_seed = parse(key, v)?,
            "dft_oversampling" => self.optimizer.dft_oversampling = parse(key, v)?,
            "dft_random_columns" => self.optimizer.dft_random_columns = parse_bool(key, v)?,
            "omp_oversampling" => self.omp_oversampling = parse(key, v)?,
            "bootstrap_resamples" => self.bootstrap_resamples = parse(key, v)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v)?,
            "verify_common_knowledge" => self.verify_common_knowledge = parse_bool(key, v)?,
            "output" => {
                let t = v.trim().trim_matches('"');
                self.output = if t.is_empty() { None } else { Some(PathBuf::from(t)) };
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` TOML document on top of the defaults.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let mut spec = Self::default();
        spec.apply_toml(src)?;
        Ok(spec)
    }

    pub fn apply_toml(&mut self, src: &str) -> Result<()> {
        let table: toml::Table = src.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for (k, v) in &table {
            let text = match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Array(a) => a
                    .iter()
                    .map(|x| match x {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                toml::Value::Table(_) => {
                    return Err(Error::Config(format!("`{k}`: nested tables are not supported")))
                }
                other => other.to_string(),
            };
            self.set(k, &text)?;
        }
        Ok(())
    }

    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.scenario;
        let join = |v: Vec<String>| format!("[{}]", v.join(", "));
        let quoted = |x: &dyn fmt::Display| toml::Value::String(x.to_string()).to_string();
        let big = |x: u64| if i64::try_from(x).is_ok() { x.to_string() } else { quoted(&x) };
        Some(match key {
            "n_tx" => s.n_tx.to_string(),
            "n_rx" => s.n_rx.to_string(),
            "n_pilots" => s.n_pilots.to_string(),
            "n_users" => s.n_users.to_string(),
            "snr_db" => format!("{:?}", s.snr_db),
            "rho" => format!("{:?}", s.rho),
            "n_blocks" => s.n_blocks.to_string(),
            "seed" => big(s.seed),
            "spread_tx_deg" => format!("{:?}", s.spread_tx_deg),
            "spread_rx_deg" => format!("{:?}", s.spread_rx_deg),
            "quad_points" => s.quad_points.to_string(),
            "n_clusters" => s.n_clusters.to_string(),
            "mode" => quoted(&self.mode),
            "sweep" => quoted(&self.sweep),
            "sweep_values" => join(self.sweep_values.iter().map(|v| format!("{v:?}")).collect()),
            "eval_block" => self.eval_block.to_string(),
            "pilots" => join(self.pilots.iter().map(|p| quoted(p)).collect()),
            "estimators" => join(self.estimators.iter().map(|p| quoted(p)).collect()),
            "n_train" => self.n_train.to_string(),
            "n_eval" => self.n_eval.to_string(),
            "n_con" => self.n_con.to_string(),
            "k_tx" => self.k_tx.to_string(),
            "k_rx" => self.k_rx.to_string(),
            "em_max_iters" => self.em.max_iters.to_string(),
            "em_tol" => format!("{:?}", self.em.tol),
            "objective" => quoted(&match self.optimizer.objective_kind {
                ObjectiveKind::FullCmi => "full_cmi",
                ObjectiveKind::LowerBound => "lower_bound",
            }),
            "l_max" => self.optimizer.l_max.to_string(),
            "epsilon" => format!("{:?}", self.optimizer.epsilon),
            "init" => quoted(&match self.optimizer.init_kind {
                InitKind::Dft => "dft",
                InitKind::Random => "random",
            }),
            "init_seed" => big(self.optimizer.init_seed),
            "dft_oversampling" => self.optimizer.dft_oversampling.to_string(),
            "dft_random_columns" => self.optimizer.dft_random_columns.to_string(),
            "omp_oversampling" => self.omp_oversampling.to_string(),
            "bootstrap_resamples" => self.bootstrap_resamples.to_string(),
            "record_wall_time" => self.record_wall_time.to_string(),
            "verify_common_knowledge" => self.verify_common_knowledge.to_string(),
            "output" => quoted(&self.output.as_ref().map_or(String::new(), |p| p.display().to_string())),
            _ => return None,
        })
    }

    /// Flat TOML with every key.
    pub fn to_toml(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.pilots
            .iter()
            .flat_map(|&pilot| self.estimators.iter().map(move |&estimator| Scheme { pilot, estimator }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.optimizer.validate()?;
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.pilots.is_empty() || self.estimators.is_empty() {
            return cfg("need at least one pilot scheme and one estimator");
        }
        if self.sweep != SweepKind::Block && self.sweep_values.is_empty() {
            return cfg("sweep_values must be nonempty");
        }
        if self.sweep == SweepKind::LMax && self.mode != Mode::Mu {
            return cfg("an l_max sweep needs mode = mu");
        }
        if self.sweep != SweepKind::Block && self.eval_block > self.scenario.n_blocks {
            return cfg("eval_block exceeds n_blocks");
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return cfg("n_train and n_eval must be positive");
        }
        if self.mode == Mode::Mu && (self.n_con == 0 || self.scenario.n_users > self.n_eval) {
            return cfg("multi-user mode needs n_con >= 1 and n_users <= n_eval");
        }
        if self.k_tx == 0 || self.k_rx == 0 {
            return cfg("k_tx and k_rx must be positive");
        }
        if self.bootstrap_resamples == 0 {
            return cfg("bootstrap_resamples must be positive");
        }
        if self.omp_oversampling == 0 {
            return cfg("omp_oversampling must be positive");
        }
        Ok(())
    }
}
