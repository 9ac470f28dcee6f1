//! Run configuration: a flat JSON object of dotted keys, overlaid with
//! `--key=value` command-line overrides, resolved into a [`RunSpec`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use droprate_core::model::ModelConfig;
use droprate_core::schedule::{ScheduleConfig, ScheduleKind};
use droprate_core::trainer::TrainConfig;
use serde_json::{json, Map, Value};

use crate::CliError;

/// Short spellings accepted on the command line.
const ALIASES: &[(&str, &str)] = &[
    ("schedule", "schedule.kind"),
    ("p0", "schedule.p0"),
    ("pf", "schedule.pf"),
    ("seed", "train.seed"),
    ("max_iters", "train.max_iters"),
    ("lr", "train.learning_rate"),
    ("corpus", "data.corpus"),
    ("out", "out.dir"),
    ("label", "run.label"),
    ("schedules", "compare.schedules"),
];

/// Every accepted key with its default. `null` marks values derived from
/// other keys or from the corpus during resolution.
fn defaults() -> BTreeMap<String, Value> {
    let m = ModelConfig::default();
    let s = ScheduleConfig::default();
    let t = TrainConfig::default();
    let all: Vec<&str> = ScheduleKind::ALL.iter().map(|k| k.label()).collect();
    [
        ("data.corpus", Value::Null),
        ("data.val_fraction", json!(droprate_core::data::DEFAULT_VAL_FRACTION)),
        ("model.n_layer", json!(m.n_layer)),
        ("model.n_head", json!(m.n_head)),
        ("model.n_embd", json!(m.n_embd)),
        ("model.block_size", json!(m.block_size)),
        ("model.vocab_size", Value::Null),
        ("model.dropout_p", Value::Null),
        ("schedule.kind", json!(ScheduleKind::Constant.label())),
        ("schedule.p0", json!(s.p0)),
        ("schedule.pf", json!(s.pf)),
        ("schedule.total_iters", Value::Null),
        ("schedule.decay_factor", json!(s.decay_factor)),
        ("schedule.step_size", json!(s.step_size)),
        ("schedule.adapt_delta", json!(s.adapt_delta)),
        ("schedule.adapt_p_min", json!(s.adapt_p_min)),
        ("schedule.adapt_p_max", Value::Null),
        ("schedule.improve_tol", json!(s.improve_tol)),
        ("schedule.exp_floor_eps", json!(s.exp_floor_eps)),
        ("train.batch_size", json!(t.batch_size)),
        ("train.learning_rate", json!(t.learning_rate)),
        ("train.max_iters", json!(t.max_iters)),
        ("train.eval_interval", json!(t.eval_interval)),
        ("train.eval_iters", json!(t.eval_iters)),
        ("train.weight_decay", json!(t.weight_decay)),
        ("train.beta1", json!(t.beta1)),
        ("train.beta2", json!(t.beta2)),
        ("train.grad_clip", json!(t.grad_clip)),
        ("train.seed", json!(t.seed)),
        ("train.cosine_lr", json!(t.cosine_lr)),
        ("train.min_lr", json!(t.min_lr)),
        ("out.dir", json!("runs")),
        ("run.label", Value::Null),
        ("compare.schedules", json!(all.join(","))),
        ("compare.ais_tokens", json!(500)),
        ("compare.ais_repeats", json!(3)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Fully resolved run definition.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub corpus: PathBuf,
    pub val_fraction: f64,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub label: String,
    pub schedules: Vec<ScheduleKind>,
    pub ais_tokens: usize,
    pub ais_repeats: usize,
}

/// Raw key/value layer before resolution.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<String, Value>,
}

impl RawConfig {
    pub fn new() -> RawConfig {
        RawConfig { values: defaults() }
    }

    /// Overlays a JSON file holding one flat object.
    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let obj: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        for (k, v) in obj {
            self.set(&k, v)?;
        }
        Ok(())
    }

    /// Applies `--key=value` arguments. Values are read as JSON when they
    /// parse as JSON and as plain strings otherwise.
    pub fn merge_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        for arg in args {
            let body = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument {arg:?}; overrides take the form --key=value")))?;
            let (key, raw) = body
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {arg:?} is missing '=value'")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<(), CliError> {
        let key = ALIASES
            .iter()
            .find(|(a, _)| *a == key)
            .map_or(key, |(_, full)| full);
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
    }

    fn get(&self, key: &str) -> &Value {
        &self.values[key]
    }

    fn field<T: serde::de::DeserializeOwned>(&self, key: &str, what: &str) -> Result<T, CliError> {
        serde_json::from_value(self.get(key).clone())
            .map_err(|_| CliError::Usage(format!("{key}: expected {what}, got {}", self.get(key))))
    }

    fn optional<T: serde::de::DeserializeOwned>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        if self.get(key).is_null() {
            Ok(None)
        } else {
            self.field(key, what).map(Some)
        }
    }

    /// Resolves every key, filling derived values. `vocab_size` is the
    /// corpus alphabet size when known.
    pub fn resolve(&self, vocab_size: Option<usize>) -> Result<RunSpec, CliError> {
        const UINT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        let corpus: Option<String> = self.optional("data.corpus", "a path")?;
        let corpus = corpus.ok_or_else(|| CliError::Usage("data.corpus: a corpus path is required".into()))?;

        let kind_label: String = self.field("schedule.kind", "a schedule label")?;
        let kind: ScheduleKind = kind_label
            .parse()
            .map_err(|e| CliError::Usage(format!("schedule.kind: {e}")))?;
        let max_iters: usize = self.field("train.max_iters", UINT)?;
        let p0: f64 = self.field("schedule.p0", REAL)?;
        let schedule_cfg = ScheduleConfig {
            p0,
            pf: self.field("schedule.pf", REAL)?,
            total_iters: self.optional("schedule.total_iters", UINT)?.unwrap_or(max_iters),
            decay_factor: self.field("schedule.decay_factor", REAL)?,
            step_size: self.field("schedule.step_size", UINT)?,
            adapt_delta: self.field("schedule.adapt_delta", REAL)?,
            adapt_p_min: self.field("schedule.adapt_p_min", REAL)?,
            adapt_p_max: Some(self.optional("schedule.adapt_p_max", REAL)?.unwrap_or(p0)),
            improve_tol: self.field("schedule.improve_tol", REAL)?,
            exp_floor_eps: self.field("schedule.exp_floor_eps", REAL)?,
        };
        schedule_cfg
            .validate()
            .map_err(|e| CliError::Usage(format!("schedule: {e}")))?;

        let declared_vocab: Option<usize> = self.optional("model.vocab_size", UINT)?;
        let vocab = match (declared_vocab, vocab_size) {
            (Some(d), Some(v)) if d != v => {
                return Err(CliError::Usage(format!(
                    "model.vocab_size: config says {d} but the corpus has {v} distinct characters"
                )))
            }
            (Some(d), _) => d,
            (None, Some(v)) => v,
            (None, None) => 2,
        };
        let dropout_p = self.optional("model.dropout_p", REAL)?.unwrap_or(p0);
        if dropout_p != p0 {
            return Err(CliError::Usage(format!(
                "model.dropout_p: {dropout_p} differs from schedule.p0 {p0}; the initial rate comes from the schedule"
            )));
        }
        let model = ModelConfig {
            n_layer: self.field("model.n_layer", UINT)?,
            n_head: self.field("model.n_head", UINT)?,
            n_embd: self.field("model.n_embd", UINT)?,
            block_size: self.field("model.block_size", UINT)?,
            vocab_size: vocab,
            dropout_p,
        };
        let train = TrainConfig {
            model,
            schedule: kind,
            schedule_cfg,
            batch_size: self.field("train.batch_size", UINT)?,
            learning_rate: self.field("train.learning_rate", REAL)?,
            max_iters,
            eval_interval: self.field("train.eval_interval", UINT)?,
            eval_iters: self.field("train.eval_iters", UINT)?,
            weight_decay: self.field("train.weight_decay", REAL)?,
            beta1: self.field("train.beta1", REAL)?,
            beta2: self.field("train.beta2", REAL)?,
            grad_clip: self.field("train.grad_clip", REAL)?,
            seed: self.field("train.seed", UINT)?,
            cosine_lr: self.field("train.cosine_lr", "true or false")?,
            min_lr: self.field("train.min_lr", REAL)?,
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let val_fraction: f64 = self.field("data.val_fraction", REAL)?;
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(CliError::Usage(format!("data.val_fraction: {val_fraction} must lie in (0, 1)")));
        }
        let schedules = parse_schedules(self.get("compare.schedules"))?;
        let label = self.optional("run.label", "a string")?.unwrap_or_else(|| kind.label().to_string());
        let out_dir: String = self.field("out.dir", "a path")?;
        Ok(RunSpec {
            corpus: PathBuf::from(corpus),
            val_fraction,
            train,
            out_dir: PathBuf::from(out_dir),
            label,
            schedules,
            ais_tokens: self.field("compare.ais_tokens", UINT)?,
            ais_repeats: self.field("compare.ais_repeats", UINT)?,
        })
    }
}

fn parse_schedules(v: &Value) -> Result<Vec<ScheduleKind>, CliError> {
    let items: Vec<String> = match v {
        Value::String(s) => s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect(),
        Value::Array(a) => a
            .iter()
            .map(|x| {
                x.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| CliError::Usage(format!("compare.schedules: {x} is not a label")))
            })
            .collect::<Result<_, _>>()?,
        other => return Err(CliError::Usage(format!("compare.schedules: expected labels, got {other}"))),
    };
    let mut out: Vec<ScheduleKind> = Vec::new();
    for item in items {
        let k: ScheduleKind = item
            .parse()
            .map_err(|e| CliError::Usage(format!("compare.schedules: {e}")))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    Ok(out)
}

impl RunSpec {
    /// The resolved configuration as flat dotted keys; feeding this back as
    /// a config file reproduces the same run.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let t = &self.train;
        let s = &t.schedule_cfg;
        let labels: Vec<&str> = self.schedules.iter().map(|k| k.label()).collect();
        [
            ("data.corpus", json!(self.corpus.to_string_lossy())),
            ("data.val_fraction", json!(self.val_fraction)),
            ("model.n_layer", json!(t.model.n_layer)),
            ("model.n_head", json!(t.model.n_head)),
            ("model.n_embd", json!(t.model.n_embd)),
            ("model.block_size", json!(t.model.block_size)),
            ("model.vocab_size", json!(t.model.vocab_size)),
            ("model.dropout_p", json!(t.model.dropout_p)),
            ("schedule.kind", json!(t.schedule.label())),
            ("schedule.p0", json!(s.p0)),
            ("schedule.pf", json!(s.pf)),
            ("schedule.total_iters", json!(s.total_iters)),
            ("schedule.decay_factor", json!(s.decay_factor)),
            ("schedule.step_size", json!(s.step_size)),
            ("schedule.adapt_delta", json!(s.adapt_delta)),
            ("schedule.adapt_p_min", json!(s.adapt_p_min)),
            ("schedule.adapt_p_max", json!(s.p_max())),
            ("schedule.improve_tol", json!(s.improve_tol)),
            ("schedule.exp_floor_eps", json!(s.exp_floor_eps)),
            ("train.batch_size", json!(t.batch_size)),
            ("train.learning_rate", json!(t.learning_rate)),
            ("train.max_iters", json!(t.max_iters)),
            ("train.eval_interval", json!(t.eval_interval)),
            ("train.eval_iters", json!(t.eval_iters)),
            ("train.weight_decay", json!(t.weight_decay)),
            ("train.beta1", json!(t.beta1)),
            ("train.beta2", json!(t.beta2)),
            ("train.grad_clip", json!(t.grad_clip)),
            ("train.seed", json!(t.seed)),
            ("train.cosine_lr", json!(t.cosine_lr)),
            ("train.min_lr", json!(t.min_lr)),
            ("out.dir", json!(self.out_dir.to_string_lossy())),
            ("run.label", json!(self.label)),
            ("compare.schedules", json!(labels.join(","))),
            ("compare.ais_tokens", json!(self.ais_tokens)),
            ("compare.ais_repeats", json!(self.ais_repeats)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_flat()).expect("plain values serialize") + "\n"
    }

    /// A copy running schedule `kind` under its report label.
    pub fn with_schedule(&self, kind: ScheduleKind) -> RunSpec {
        let mut s = self.clone();
        s.train.schedule = kind;
        s.label = kind.label().to_string();
        s
    }
}
