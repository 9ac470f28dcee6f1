//! Training loop: AdamW with a per-iteration dropout rate taken from the
//! configured schedule, periodic loss estimates, metrics, checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Split, SplitDataset, Vocab};
use crate::error::{Error, Result};
use crate::model::{GptModel, ModelConfig};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::RngState;
use crate::schedule::{adaptive_observe, rate_at, AdaptiveState, ScheduleConfig, ScheduleKind};

// Stream ids under the run seed. Every draw is addressed by iteration, so a
// resumed run sees the same batches and masks as an uninterrupted one.
const ROOT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

pub const METRICS_HEADER: &str = "iter,train_loss,val_loss,dropout_p,elapsed_s";
pub const MIN_BENCH_TOKENS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleKind,
    pub schedule_cfg: ScheduleConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub eval_interval: usize,
    pub eval_iters: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Cosine learning-rate decay from `learning_rate` to `min_lr`.
    pub cosine_lr: bool,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            schedule: ScheduleKind::Constant,
            schedule_cfg: ScheduleConfig::default(),
            batch_size: 64,
            learning_rate: 1e-3,
            max_iters: 5000,
            eval_interval: 250,
            eval_iters: 20,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            grad_clip: 1.0,
            seed: 1337,
            cosine_lr: false,
            min_lr: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.schedule_cfg.validate()?;
        if self.max_iters == 0 || self.batch_size == 0 {
            return bad("max_iters and batch_size must be at least 1".into());
        }
        if self.eval_interval == 0 || self.eval_interval > self.max_iters {
            return bad(format!(
                "eval_interval={} must lie in 1..={}",
                self.eval_interval, self.max_iters
            ));
        }
        if self.eval_iters == 0 {
            return bad("eval_iters must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate={} must be positive", self.learning_rate));
        }
        if self.cosine_lr && !(self.min_lr >= 0.0 && self.min_lr <= self.learning_rate) {
            return bad(format!("min_lr={} must lie in [0, learning_rate]", self.min_lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta1={} and beta2={} must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay={} must be non-negative", self.weight_decay));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad(format!("grad_clip={} must be positive", self.grad_clip));
        }
        let horizon = matches!(
            self.schedule,
            ScheduleKind::LinearDecay | ScheduleKind::ExponentialDecay | ScheduleKind::CosineAnnealing
        );
        if horizon && self.schedule_cfg.total_iters + 1 < self.max_iters {
            return bad(format!(
                "schedule total_iters={} is shorter than the run (max_iters={})",
                self.schedule_cfg.total_iters, self.max_iters
            ));
        }
        Ok(())
    }

    fn lr_at(&self, t: usize) -> f64 {
        if !self.cosine_lr {
            return self.learning_rate;
        }
        let c = (std::f64::consts::PI * t as f64 / self.max_iters as f64).cos();
        self.min_lr + (self.learning_rate - self.min_lr) * (1.0 + c) / 2.0
    }

    fn is_eval(&self, t: usize) -> bool {
        t.is_multiple_of(self.eval_interval) || t + 1 == self.max_iters
    }

    /// Number of metrics rows a complete run emits.
    pub fn eval_count(&self) -> usize {
        (0..self.max_iters).filter(|&t| self.is_eval(t)).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dropout_p: f64,
    pub elapsed_s: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{},{:.2}",
            self.iter, self.train_loss, self.val_loss, self.dropout_p, self.elapsed_s
        )
    }
}

pub trait MetricsSink {
    fn record(&mut self, r: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        self.push(*r);
        Ok(())
    }
}

/// Writes the metrics CSV, flushing after every row.
pub struct CsvSink {
    out: BufWriter<File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<CsvSink> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(CsvSink { out })
    }
}

impl MetricsSink for CsvSink {
    fn record(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", r.csv_row())?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub metrics: Vec<MetricsRecord>,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub total_train_seconds: f64,
    pub checkpoint: Option<PathBuf>,
    /// Total `update_dropout` calls over the run, including before a resume.
    pub update_calls: u64,
    /// False when the run stopped early at `TrainOptions::stop_at`.
    pub completed: bool,
}

/// Trainer state carried in a checkpoint alongside the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub train: TrainConfig,
    pub vocab: Vocab,
    pub adaptive: Option<AdaptiveState>,
    pub metrics: Vec<MetricsRecord>,
    pub elapsed_s: f64,
    pub update_calls: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where the checkpoint is written at the end (or at `stop_at`).
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Stop before running this iteration.
    pub stop_at: Option<usize>,
}

/// Mean eval-mode loss over `eval_iters` batches drawn from `rng`.
pub fn estimate_loss(
    model: &GptModel,
    ds: &SplitDataset,
    split: Split,
    eval_iters: usize,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let seq = model.config().block_size;
    let mut total = 0.0;
    for _ in 0..eval_iters {
        let (x, y) = ds.sample_batch(split, batch_size, seq, rng)?;
        total += model.eval_loss(&x, &y)?;
    }
    Ok(total / eval_iters as f64)
}

fn restore(cfg: &TrainConfig, ds: &SplitDataset, ck: &Checkpoint) -> Result<(GptModel, AdamW, TrainerState)> {
    let state: TrainerState = serde_json::from_value(ck.extra.clone())
        .map_err(|e| Error::IncompatibleCheckpoint(format!("trainer state: {e}")))?;
    if state.train != *cfg {
        return Err(Error::IncompatibleCheckpoint(
            "checkpoint was written by a different training configuration".into(),
        ));
    }
    if state.vocab != ds.vocab {
        return Err(Error::IncompatibleCheckpoint("checkpoint vocabulary differs from the corpus".into()));
    }
    if ck.iteration > cfg.max_iters {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint iteration {} is past max_iters {}",
            ck.iteration, cfg.max_iters
        )));
    }
    Ok((ck.model()?, ck.optimizer.clone(), state))
}

/// Runs iterations `0..max_iters` (or from a resumed checkpoint). Each
/// iteration sets the scheduled rate on every dropout site before its
/// forward pass; evaluation at iteration `t` happens before that
/// iteration's update.
pub fn train(cfg: &TrainConfig, ds: &SplitDataset, sink: &mut dyn MetricsSink, opts: &TrainOptions) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.model.vocab_size != ds.vocab.size() {
        return Err(Error::Config(format!(
            "model.vocab_size={} but the corpus has {} distinct characters",
            cfg.model.vocab_size,
            ds.vocab.size()
        )));
    }

    let (mut model, mut opt, mut state, start) = match &opts.resume {
        Some(ck) => {
            let (m, o, s) = restore(cfg, ds, ck)?;
            (m, o, s, ck.iteration)
        }
        None => {
            let model = GptModel::init(cfg.model.clone(), cfg.seed)?;
            let adaptive = (cfg.schedule == ScheduleKind::ValLossAdaptive).then(|| AdaptiveState::new(&cfg.schedule_cfg));
            let state = TrainerState {
                train: cfg.clone(),
                vocab: ds.vocab.clone(),
                adaptive,
                metrics: Vec::new(),
                elapsed_s: 0.0,
                update_calls: 0,
            };
            (model, AdamW::new(), state, 0)
        }
    };
    for r in &state.metrics {
        sink.record(r)?;
    }

    let root = RngState::new(cfg.seed, ROOT_STREAM);
    let batch_root = RngState::new(cfg.seed, BATCH_STREAM);
    let dropout_root = RngState::new(cfg.seed, DROPOUT_STREAM);
    let eval_root = RngState::new(cfg.seed, EVAL_STREAM);
    let seq = cfg.model.block_size;
    let clock = Instant::now();
    let prior_calls = state.update_calls;
    let elapsed = |state: &TrainerState| state.elapsed_s + clock.elapsed().as_secs_f64();

    let mut stopped_at = None;
    for t in start..cfg.max_iters {
        if opts.stop_at == Some(t) {
            stopped_at = Some(t);
            break;
        }
        let p = rate_at(cfg.schedule, t, &cfg.schedule_cfg, state.adaptive.as_ref())?;
        model.update_dropout(p)?;

        if cfg.is_eval(t) {
            let mut rng = eval_root.derive(t as u64);
            let train_loss = estimate_loss(&model, ds, Split::Train, cfg.eval_iters, cfg.batch_size, &mut rng)?;
            let val_loss = estimate_loss(&model, ds, Split::Val, cfg.eval_iters, cfg.batch_size, &mut rng)?;
            for loss in [train_loss, val_loss] {
                if !loss.is_finite() {
                    return Err(Error::Divergence { iter: t, loss });
                }
            }
            let rec = MetricsRecord {
                iter: t,
                train_loss,
                val_loss,
                dropout_p: p,
                elapsed_s: elapsed(&state),
            };
            log::info!(
                "iter {t}: train {train_loss:.4} val {val_loss:.4} p {p:.4} ({:.1}s)",
                rec.elapsed_s
            );
            sink.record(&rec)?;
            state.metrics.push(rec);
            if let Some(a) = &state.adaptive {
                state.adaptive = Some(adaptive_observe(a, val_loss, &cfg.schedule_cfg)?.0);
            }
        }

        let (x, y) = ds.sample_batch(Split::Train, cfg.batch_size, seq, &mut batch_root.derive(t as u64))?;
        model.params.zero_grad();
        let fwd = model.forward(&x, Some(&y), true, &dropout_root.derive(t as u64))?;
        let loss_var = fwd.loss.expect("targets given");
        let loss = fwd.graph.scalar(loss_var);
        if !loss.is_finite() {
            return Err(Error::Divergence { iter: t, loss });
        }
        fwd.graph.backward(loss_var, &mut model.params)?;
        model.params.clip_grad_norm(cfg.grad_clip);
        let adam = AdamWConfig {
            lr: cfg.lr_at(t),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
        };
        opt.step(&mut model.params, &adam, true)?;
    }

    let next_iter = stopped_at.unwrap_or(cfg.max_iters);
    let total_train_seconds = elapsed(&state);
    let update_calls = prior_calls + model.update_calls();
    state.elapsed_s = total_train_seconds;
    state.update_calls = update_calls;
    if let Some(path) = &opts.checkpoint {
        let extra = serde_json::to_value(&state)?;
        Checkpoint::from_model(&model, &opt, next_iter, root.snapshot(), extra).save(path)?;
    }

    let final_train_loss = state.metrics.last().map_or(f64::NAN, |r| r.train_loss);
    let best_val_loss = state.metrics.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    Ok(RunResult {
        metrics: state.metrics,
        final_train_loss,
        best_val_loss,
        total_train_seconds,
        checkpoint: opts.checkpoint.clone(),
        update_calls,
        completed: stopped_at.is_none(),
    })
}

/// Tokens per second of eval-mode generation of `n_tokens` new tokens.
pub fn measure_inference_speed(model: &GptModel, prompt: &[usize], n_tokens: usize, rng: &mut RngState) -> Result<f64> {
    if n_tokens < MIN_BENCH_TOKENS {
        return Err(Error::InvalidInput(format!(
            "n_tokens={n_tokens} is below the minimum of {MIN_BENCH_TOKENS}"
        )));
    }
    let start = Instant::now();
    let out = model.generate(prompt, n_tokens, 1.0, None, rng)?;
    let secs = start.elapsed().as_secs_f64();
    debug_assert_eq!(out.len(), prompt.len() + n_tokens);
    Ok(n_tokens as f64 / secs.max(f64::MIN_POSITIVE))
}
