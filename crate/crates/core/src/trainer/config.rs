//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::buckets::AssignRule;
use crate::corpus::SplitRatios;
use crate::encoders::{Backbone, GraphEncoderConfig, SeqEncoderConfig};
use crate::error::{Error, Result};
use crate::girg::GirgConfig;
use crate::interest::CapsuleConfig;
use crate::objective::{ContrastiveForm, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoGcl,
    UnweightedGraph,
    RandomNegatives,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoGcl,
        Variant::UnweightedGraph,
        Variant::RandomNegatives,
    ];
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "no_gcl" => Ok(Variant::NoGcl),
            "unweighted_graph" => Ok(Variant::UnweightedGraph),
            "random_negatives" => Ok(Variant::RandomNegatives),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoGcl => "no_gcl",
            Variant::UnweightedGraph => "unweighted_graph",
            Variant::RandomNegatives => "random_negatives",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sequences: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub split: SplitRatios,
    pub girg: GirgConfig,
    pub depth: usize,
    pub buckets: usize,
    pub lambda: f64,
    pub n_neg: usize,
    pub assign_rule: AssignRule,
    pub seq: SeqEncoderConfig,
    pub graph: GraphEncoderConfig,
    pub capsules: CapsuleConfig,
    pub loss: LossWeights,
    pub contrastive_form: ContrastiveForm,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cap on contrastive anchors per batch.
    pub cl_anchors: usize,
    /// Unobserved negatives per positive in the prediction loss.
    pub pred_neg: usize,
    /// Epochs without validation NDCG@10 gain before stopping; 0 disables.
    pub patience: usize,
    pub seed: Option<u64>,
    pub variant: Variant,
    pub deterministic: bool,
    pub init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sequences: None,
            attributes: None,
            split: SplitRatios::default(),
            girg: GirgConfig::default(),
            depth: 2,
            buckets: 10,
            lambda: 0.5,
            n_neg: 8,
            assign_rule: AssignRule::Nearest,
            seq: SeqEncoderConfig {
                dim: 32,
                ..SeqEncoderConfig::default()
            },
            graph: GraphEncoderConfig::default(),
            capsules: CapsuleConfig::default(),
            loss: LossWeights::default(),
            contrastive_form: ContrastiveForm::Standard,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            cl_anchors: 32,
            pred_neg: 1,
            patience: 0,
            seed: None,
            variant: Variant::Full,
            deterministic: true,
            init_std: 0.1,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}: expected a boolean"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "sequences",
        "attributes",
        "split_train",
        "split_val",
        "split_test",
        "max_interval",
        "epsilon",
        "depth",
        "buckets",
        "lambda",
        "n_neg",
        "assign_rule",
        "backbone",
        "dim",
        "heads",
        "blocks",
        "max_len",
        "layers",
        "capsules",
        "iterations",
        "theta1",
        "theta2",
        "theta3",
        "tau",
        "contrastive_form",
        "epochs",
        "batch_size",
        "lr",
        "cl_anchors",
        "pred_neg",
        "patience",
        "seed",
        "variant",
        "deterministic",
        "init_std",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "sequences" => self.sequences = opt_path(value),
            "attributes" => self.attributes = opt_path(value),
            "split_train" => self.split.train = parse(key, value)?,
            "split_val" => self.split.val = parse(key, value)?,
            "split_test" => self.split.test = parse(key, value)?,
            "max_interval" => self.girg.max_interval = parse(key, value)?,
            "epsilon" => self.girg.epsilon = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "buckets" => self.buckets = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "n_neg" => self.n_neg = parse(key, value)?,
            "assign_rule" => self.assign_rule = parse(key, value)?,
            "backbone" => self.seq.backbone = parse(key, value)?,
            "dim" => self.seq.dim = parse(key, value)?,
            "heads" => self.seq.heads = parse(key, value)?,
            "blocks" => self.seq.blocks = parse(key, value)?,
            "max_len" => self.seq.max_len = parse(key, value)?,
            "layers" => self.graph.layers = parse(key, value)?,
            "capsules" => self.capsules.capsules = parse(key, value)?,
            "iterations" => self.capsules.iterations = parse(key, value)?,
            "theta1" => self.loss.theta1 = parse(key, value)?,
            "theta2" => self.loss.theta2 = parse(key, value)?,
            "theta3" => self.loss.theta3 = parse(key, value)?,
            "tau" => self.loss.tau = parse(key, value)?,
            "contrastive_form" => self.contrastive_form = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "cl_anchors" => self.cl_anchors = parse(key, value)?,
            "pred_neg" => self.pred_neg = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "variant" => self.variant = parse(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "sequences" => path(&self.sequences),
            "attributes" => path(&self.attributes),
            "split_train" => self.split.train.to_string(),
            "split_val" => self.split.val.to_string(),
            "split_test" => self.split.test.to_string(),
            "max_interval" => self.girg.max_interval.to_string(),
            "epsilon" => self.girg.epsilon.to_string(),
            "depth" => self.depth.to_string(),
            "buckets" => self.buckets.to_string(),
            "lambda" => self.lambda.to_string(),
            "n_neg" => self.n_neg.to_string(),
            "assign_rule" => match self.assign_rule {
                AssignRule::Nearest => "nearest".into(),
                AssignRule::Literal => "literal".into(),
            },
            "backbone" => self.seq.backbone.to_string(),
            "dim" => self.seq.dim.to_string(),
            "heads" => self.seq.heads.to_string(),
            "blocks" => self.seq.blocks.to_string(),
            "max_len" => self.seq.max_len.to_string(),
            "layers" => self.graph.layers.to_string(),
            "capsules" => self.capsules.capsules.to_string(),
            "iterations" => self.capsules.iterations.to_string(),
            "theta1" => self.loss.theta1.to_string(),
            "theta2" => self.loss.theta2.to_string(),
            "theta3" => self.loss.theta3.to_string(),
            "tau" => self.loss.tau.to_string(),
            "contrastive_form" => self.contrastive_form.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "cl_anchors" => self.cl_anchors.to_string(),
            "pred_neg" => self.pred_neg.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.map(|s| s.to_string()).unwrap_or_default(),
            "variant" => self.variant.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "init_std" => self.init_std.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `(key, value)` overrides in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(&k.replace('-', "_"), v)?;
        }
        Ok(())
    }

    /// Canonical rendering, one key per line in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required".into()))
    }

    /// Effective loss weights after applying the variant.
    pub fn effective_loss(&self) -> LossWeights {
        let mut w = self.loss;
        if self.variant == Variant::NoGcl {
            w.theta2 = 0.0;
        }
        w
    }

    pub fn effective_girg(&self) -> GirgConfig {
        let mut g = self.girg;
        if self.variant == Variant::UnweightedGraph {
            g.unweighted = true;
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.seed()?;
        self.loss.validate()?;
        self.capsules.validate()?;
        if self.girg.max_interval == 0 {
            return bad("max_interval must be at least 1");
        }
        if !(self.girg.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.buckets < 2 {
            return bad("buckets must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1");
        }
        if self.seq.dim == 0 || self.seq.max_len == 0 {
            return bad("dim and max_len must be positive");
        }
        if self.seq.backbone == Backbone::Transformer && (self.seq.heads == 0 || self.seq.dim % self.seq.heads != 0) {
            return bad("dim must be divisible by heads");
        }
        if self.graph.layers == 0 {
            return bad("layers must be at least 1");
        }
        if self.batch_size == 0 || self.cl_anchors == 0 {
            return bad("batch_size and cl_anchors must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}
