//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected. Every
//! key is optional; missing keys keep their defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluator::Protocol;
use crate::expert::Gate;
use crate::store::Schema;
use crate::trainer::{ContrastiveMode, Precision, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Member,
    MfBpr,
    LgcnBuy,
    LgcnGlobal,
    MemberAvgGate,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Member,
        ModelKind::MfBpr,
        ModelKind::LgcnBuy,
        ModelKind::LgcnGlobal,
        ModelKind::MemberAvgGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Member => "member",
            ModelKind::MfBpr => "mf_bpr",
            ModelKind::LgcnBuy => "lgcn_buy",
            ModelKind::LgcnGlobal => "lgcn_global",
            ModelKind::MemberAvgGate => "member_avg_gate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }

    /// Whether this kind trains the two-expert model.
    pub fn is_member(self) -> bool {
        matches!(self, ModelKind::Member | ModelKind::MemberAvgGate)
    }

    /// Stable tag stored in checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::Member => 0,
            ModelKind::MfBpr => 1,
            ModelKind::LgcnBuy => 2,
            ModelKind::LgcnGlobal => 3,
            ModelKind::MemberAvgGate => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Raw interaction file for `prep`.
    pub data: Option<PathBuf>,
    /// Prepared bundle directory for `train` and `eval`.
    pub bundle: Option<PathBuf>,
    pub schema: Schema,
    pub model: ModelKind,
    pub out: Option<PathBuf>,
    pub ks: Vec<usize>,
    pub protocols: Vec<Protocol>,
    /// Hold out a validation buy per user in `prep`.
    pub valid: bool,
    /// Embedding size used by the single-model baselines.
    pub baseline_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: None,
            bundle: None,
            schema: Schema::four_stage(),
            model: ModelKind::Member,
            out: None,
            ks: vec![10, 20],
            protocols: Protocol::ALL.to_vec(),
            valid: true,
            baseline_dim: 64,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

pub fn parse_ks(v: &str) -> Result<Vec<usize>> {
    let ks = v
        .split(',')
        .map(|s| parse_num::<usize>("ks", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("ks must be a non-empty list of positive integers".into()));
    }
    Ok(ks)
}

pub fn parse_protocols(v: &str) -> Result<Vec<Protocol>> {
    let ps = v
        .split(',')
        .map(|s| Protocol::parse(s.trim()).ok_or_else(|| Error::Config(format!("unknown protocol `{}`", s.trim()))))
        .collect::<Result<Vec<_>>>()?;
    if ps.is_empty() {
        return Err(Error::Config("protocol list is empty".into()));
    }
    Ok(ps)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut gate = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            let t = &mut cfg.train;
            match key {
                "dim" => t.dim = parse_num(key, v)?,
                "layers" => t.layers = parse_num(key, v)?,
                "lambda_visited" => t.lambda_visited = parse_num(key, v)?,
                "lambda_unvisited" => t.lambda_unvisited = parse_num(key, v)?,
                "tau" => t.tau = parse_num(key, v)?,
                "tau_prime" => t.tau_prime = parse_num(key, v)?,
                "gamma1" => t.gamma1 = parse_num(key, v)?,
                "gamma2" => t.gamma2 = parse_num(key, v)?,
                "gamma3" => t.gamma3 = parse_num(key, v)?,
                "learning_rate" => t.learning_rate = parse_num(key, v)?,
                "batch_size" => t.batch_size = parse_num(key, v)?,
                "gen_negatives_k" => t.gen_negatives_k = parse_num(key, v)?,
                "max_epochs" => t.max_epochs = parse_num(key, v)?,
                "patience" => t.patience = parse_num(key, v)?,
                "early_stopping" => t.early_stopping = parse_bool(key, v)?,
                "seed" => t.seed = parse_num(key, v)?,
                "precision" => {
                    t.precision = match v {
                        "single" => Precision::Single,
                        "double" => Precision::Double,
                        _ => return Err(Error::Config(format!("precision must be single or double, got `{v}`"))),
                    }
                }
                "contrastive_mode" => {
                    t.contrastive_mode = match v {
                        "batch" => ContrastiveMode::Batch,
                        "full" => ContrastiveMode::Full,
                        _ => return Err(Error::Config(format!("contrastive_mode must be batch or full, got `{v}`"))),
                    }
                }
                "gate" => {
                    gate = Some(match v {
                        "hard" => Gate::Hard,
                        "average" => Gate::Average,
                        _ => return Err(Error::Config(format!("gate must be hard or average, got `{v}`"))),
                    })
                }
                "data" => cfg.data = Some(PathBuf::from(v)),
                "bundle" => cfg.bundle = Some(PathBuf::from(v)),
                "behaviors" => cfg.schema = Schema::parse(v).map_err(|e| Error::Config(e.to_string()))?,
                "model" => cfg.model = ModelKind::parse(v)?,
                "out" => cfg.out = Some(PathBuf::from(v)),
                "ks" => cfg.ks = parse_ks(v)?,
                "protocols" => cfg.protocols = parse_protocols(v)?,
                "valid" => cfg.valid = parse_bool(key, v)?,
                "baseline_dim" => cfg.baseline_dim = parse_num(key, v)?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        cfg.set_gate(gate);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set_gate(&mut self, explicit: Option<Gate>) {
        self.train.gate = explicit.unwrap_or(if self.model == ModelKind::MemberAvgGate {
            Gate::Average
        } else {
            Gate::Hard
        });
    }

    /// Switches the model kind, keeping the gate consistent with it.
    pub fn set_model(&mut self, model: ModelKind) {
        self.model = model;
        self.set_gate(None);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.ks.is_empty() {
            return Err(Error::Config("ks must not be empty".into()));
        }
        if self.baseline_dim == 0 {
            return Err(Error::Config("baseline_dim must be positive".into()));
        }
        Ok(())
    }

    /// Training settings for the configured model; baselines use
    /// `baseline_dim` as their embedding size.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if !self.model.is_member() {
            t.dim = self.baseline_dim;
        }
        t
    }

    /// Serializes back into the same key=value format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model", self.model.name().into());
        put("behaviors", self.schema.behaviors.join(","));
        put("dim", t.dim.to_string());
        put("layers", t.layers.to_string());
        put("lambda_visited", t.lambda_visited.to_string());
        put("lambda_unvisited", t.lambda_unvisited.to_string());
        put("tau", t.tau.to_string());
        put("tau_prime", t.tau_prime.to_string());
        put("gamma1", t.gamma1.to_string());
        put("gamma2", t.gamma2.to_string());
        put("gamma3", t.gamma3.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("batch_size", t.batch_size.to_string());
        put("gen_negatives_k", t.gen_negatives_k.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("patience", t.patience.to_string());
        put("early_stopping", t.early_stopping.to_string());
        put("seed", t.seed.to_string());
        put(
            "precision",
            match t.precision {
                Precision::Single => "single",
                Precision::Double => "double",
            }
            .into(),
        );
        put(
            "contrastive_mode",
            match t.contrastive_mode {
                ContrastiveMode::Batch => "batch",
                ContrastiveMode::Full => "full",
            }
            .into(),
        );
        put(
            "gate",
            match t.gate {
                Gate::Hard => "hard",
                Gate::Average => "average",
            }
            .into(),
        );
        put("ks", self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        put(
            "protocols",
            self.protocols.iter().map(|p| p.name()).collect::<Vec<_>>().join(","),
        );
        put("valid", self.valid.to_string());
        put("baseline_dim", self.baseline_dim.to_string());
        s
    }
}
