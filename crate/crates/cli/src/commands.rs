//! Subcommand implementations. Each returns its result instead of printing
//! so the binary and the tests share one code path.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use droprate_core::checkpoint::Checkpoint;
use droprate_core::data::{SplitDataset, Vocab};
use droprate_core::model::GptModel;
use droprate_core::rng::RngState;
use droprate_core::schedule::ScheduleKind;
use droprate_core::trainer::{self, CsvSink, RunResult, TrainOptions, TrainerState, MIN_BENCH_TOKENS};
use droprate_core::Error;

use crate::config::{RawConfig, RunSpec};
use crate::plot;
use crate::report::{self, ComparisonReport, ReportRow};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "ckpt.bin";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.md";
pub const COMBINED_FILE: &str = "combined.csv";
pub const PLOT_FILE: &str = "loss_curves.svg";
pub const BENCH_FILE: &str = "bench.csv";
pub const MIN_BENCH_REPEATS: usize = 3;

const AIS_STREAM: u64 = 0xA15;

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Config file plus overrides, validated without touching the corpus.
pub fn load_raw(config: Option<&Path>, overrides: &[String]) -> Result<RawConfig, CliError> {
    let mut raw = RawConfig::new();
    if let Some(p) = config {
        raw.merge_file(p)?;
    }
    raw.merge_overrides(overrides)?;
    raw.resolve(None)?;
    Ok(raw)
}

pub fn load_corpus(path: &Path, val_fraction: f64) -> Result<SplitDataset, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("data.corpus: cannot read {}: {e}", path.display())))?;
    Ok(SplitDataset::build(&text, val_fraction)?)
}

/// Resolves the run settings against the corpus they name.
pub fn prepare(raw: &RawConfig) -> Result<(RunSpec, SplitDataset), CliError> {
    let draft = raw.resolve(None)?;
    let ds = load_corpus(&draft.corpus, draft.val_fraction)?;
    let spec = raw.resolve(Some(ds.vocab.size()))?;
    Ok((spec, ds))
}

/// Trains one run, writing `run.json`, `metrics.csv` and `ckpt.bin` into `dir`.
pub fn run_into(spec: &RunSpec, ds: &SplitDataset, dir: &Path, resume: Option<Checkpoint>) -> Result<RunResult, CliError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let run_json = dir.join(RUN_FILE);
    fs::write(&run_json, spec.to_json()).map_err(io(&run_json))?;
    let mut sink = CsvSink::create(&dir.join(METRICS_FILE))?;
    let opts = TrainOptions {
        checkpoint: Some(dir.join(CHECKPOINT_FILE)),
        resume,
        stop_at: None,
    };
    Ok(trainer::train(&spec.train, ds, &mut sink, &opts)?)
}

pub fn cmd_train(config: Option<&Path>, overrides: &[String], resume: Option<&Path>) -> Result<RunResult, CliError> {
    let raw = load_raw(config, overrides)?;
    let (spec, ds) = prepare(&raw)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    run_into(&spec, &ds, &spec.out_dir, resume)
}

pub fn summarize(result: &RunResult) -> String {
    format!(
        "final train loss {:.4}, best val loss {:.4}, {:.2} min, checkpoint {}",
        result.final_train_loss,
        result.best_val_loss,
        result.total_train_seconds / 60.0,
        result.checkpoint.as_deref().map_or("-".into(), |p| p.display().to_string())
    )
}

fn prompt_ids(vocab: &Vocab) -> Vec<usize> {
    vec![vocab.id('\n').unwrap_or(0)]
}

/// Mean tokens/sec over `repeats` generations of `n_tokens` each.
fn average_speed(model: &GptModel, vocab: &Vocab, n_tokens: usize, repeats: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let prompt = prompt_ids(vocab);
    (0..repeats)
        .map(|r| {
            let mut rng = RngState::new(seed, AIS_STREAM).derive(r as u64);
            Ok(trainer::measure_inference_speed(model, &prompt, n_tokens, &mut rng)?)
        })
        .collect()
}

/// The schedule list for a comparison: the baseline first when missing,
/// and at least two schedules overall.
pub fn comparison_schedules(requested: &[ScheduleKind]) -> Result<Vec<ScheduleKind>, CliError> {
    let mut list = requested.to_vec();
    if !list.contains(&ScheduleKind::Constant) {
        list.insert(0, ScheduleKind::Constant);
    }
    if list.len() < 2 {
        return Err(CliError::Usage(format!(
            "a comparison needs at least two schedules, got {}",
            list.iter().map(|k| k.label()).collect::<Vec<_>>().join(",")
        )));
    }
    Ok(list)
}

pub struct CompareOutcome {
    pub report: ComparisonReport,
    pub results: Vec<(String, RunResult)>,
    pub out_dir: PathBuf,
}

/// Trains every schedule in turn from the same seed and corpus, then writes
/// `report.md`, `combined.csv` and `loss_curves.svg` under the output
/// directory. A failing run stops the comparison; whatever finished is still
/// written, with the report marked incomplete.
pub fn cmd_compare(config: Option<&Path>, overrides: &[String]) -> Result<CompareOutcome, CliError> {
    let raw = load_raw(config, overrides)?;
    let (spec, ds) = prepare(&raw)?;
    let schedules = comparison_schedules(&spec.schedules)?;
    if spec.ais_repeats == 0 || spec.ais_tokens < MIN_BENCH_TOKENS {
        return Err(CliError::Usage(format!(
            "compare.ais_repeats must be at least 1 and compare.ais_tokens at least {MIN_BENCH_TOKENS}"
        )));
    }
    let out = spec.out_dir.clone();
    fs::create_dir_all(&out).map_err(io(&out))?;

    let mut report = ComparisonReport::default();
    let mut results = Vec::new();
    let mut failure = None;
    for kind in schedules {
        let run = spec.with_schedule(kind);
        let dir = out.join(&run.label);
        log::info!("training {}", run.label);
        match run_into(&run, &ds, &dir, None) {
            Ok(result) => {
                let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
                let speeds = average_speed(&ck.model()?, &ds.vocab, run.ais_tokens, run.ais_repeats, run.train.seed)?;
                report.rows.push(ReportRow {
                    label: run.label.clone(),
                    final_train_loss: result.final_train_loss,
                    best_val_loss: result.best_val_loss,
                    train_minutes: result.total_train_seconds / 60.0,
                    tokens_per_sec: speeds.iter().sum::<f64>() / speeds.len() as f64,
                });
                results.push((run.label, result));
            }
            Err(e) => {
                report.incomplete = Some(format!(
                    "schedule {} failed: {e}; rows above are the runs that finished",
                    run.label
                ));
                failure = Some(e);
                break;
            }
        }
    }

    let report_path = out.join(REPORT_FILE);
    fs::write(&report_path, report.to_markdown()).map_err(io(&report_path))?;
    if !results.is_empty() {
        let runs: Vec<(String, Vec<_>)> = results.iter().map(|(l, r)| (l.clone(), r.metrics.clone())).collect();
        let combined = out.join(COMBINED_FILE);
        report::write_combined_csv(&combined, &runs)?;
        plot::plot_file(&combined, &out.join(PLOT_FILE))?;
    }
    match failure {
        Some(CliError::Usage(m)) | Some(CliError::Runtime(m)) => Err(CliError::Runtime(format!(
            "comparison incomplete, partial results in {}: {m}",
            out.display()
        ))),
        None => Ok(CompareOutcome {
            report,
            results,
            out_dir: out,
        }),
    }
}

fn load_for_inference(path: &Path) -> Result<(GptModel, Vocab), CliError> {
    let ck = Checkpoint::load(path)?;
    let state: TrainerState = serde_json::from_value(ck.extra.clone())
        .map_err(|e| CliError::Runtime(Error::IncompatibleCheckpoint(format!("trainer state: {e}")).to_string()))?;
    Ok((ck.model()?, state.vocab))
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub prompt: String,
    pub max_new: usize,
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<String, CliError> {
    let (model, vocab) = load_for_inference(&args.checkpoint)?;
    let prompt = vocab.encode(&args.prompt)?;
    let mut rng = RngState::new(args.seed, 0);
    let ids = model.generate(&prompt, args.max_new, args.temperature, args.top_k, &mut rng)?;
    Ok(vocab.decode(&ids)?)
}

pub struct BenchArgs {
    pub checkpoint: PathBuf,
    pub n_tokens: usize,
    pub repeats: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub per_repeat: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub csv: PathBuf,
}

impl BenchSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .per_repeat
            .iter()
            .enumerate()
            .map(|(i, v)| format!("repeat {}: {v:.2} tokens/sec", i + 1))
            .collect();
        out.push(format!(
            "mean {:.2} tokens/sec (min {:.2}, max {:.2})",
            self.mean, self.min, self.max
        ));
        out
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchSummary, CliError> {
    if args.n_tokens < MIN_BENCH_TOKENS || args.repeats < MIN_BENCH_REPEATS {
        return Err(CliError::Usage(format!(
            "bench needs n_tokens >= {MIN_BENCH_TOKENS} and repeats >= {MIN_BENCH_REPEATS}"
        )));
    }
    let (model, vocab) = load_for_inference(&args.checkpoint)?;
    let per_repeat = average_speed(&model, &vocab, args.n_tokens, args.repeats, args.seed)?;
    let mean = per_repeat.iter().sum::<f64>() / per_repeat.len() as f64;
    let min = per_repeat.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_repeat.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let csv = args.output.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(BENCH_FILE)
    });
    let fresh = !csv.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&csv).map_err(io(&csv))?;
    let ck = args.checkpoint.display();
    let mut text = String::new();
    if fresh {
        text.push_str("checkpoint,repeat,n_tokens,tokens_per_sec\n");
    }
    for (i, v) in per_repeat.iter().enumerate() {
        text.push_str(&format!("{ck},{},{},{v:.2}\n", i + 1, args.n_tokens));
    }
    for (name, v) in [("mean", mean), ("min", min), ("max", max)] {
        text.push_str(&format!("{ck},{name},{},{v:.2}\n", args.n_tokens));
    }
    f.write_all(text.as_bytes()).map_err(io(&csv))?;

    Ok(BenchSummary {
        per_repeat,
        mean,
        min,
        max,
        csv,
    })
}

pub fn cmd_plot(input: &Path, output: &Path) -> Result<usize, CliError> {
    Ok(plot::plot_file(input, output)?.len())
}
