//! Comparison table and the combined long-format metrics CSV.

use std::fmt::Write as _;
use std::path::Path;

use droprate_core::trainer::MetricsRecord;

use crate::CliError;

pub const COMBINED_HEADER: [&str; 5] = ["schedule", "iter", "train_loss", "val_loss", "dropout_p"];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub train_minutes: f64,
    pub tokens_per_sec: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    /// Set when a run failed and the table is partial.
    pub incomplete: Option<String>,
}

impl ComparisonReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Schedule | FTL | BVL | TTT | AIS |\n");
        s.push_str("|---|---|---|---|---|\n");
        for r in &self.rows {
            writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.2} | {:.2} |",
                r.label, r.final_train_loss, r.best_val_loss, r.train_minutes, r.tokens_per_sec
            )
            .unwrap();
        }
        s.push_str("\nFTL: final train loss (nats). BVL: best validation loss (nats). ");
        s.push_str("TTT: total train time (minutes). AIS: average inference speed (tokens/sec).\n");
        if let Some(note) = &self.incomplete {
            writeln!(s, "\n**INCOMPLETE:** {note}").unwrap();
        }
        s
    }
}

/// Writes `(schedule, iter, train_loss, val_loss, dropout_p)` rows for every run.
pub fn write_combined_csv(path: &Path, runs: &[(String, Vec<MetricsRecord>)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(COMBINED_HEADER).map_err(runtime)?;
    for (label, metrics) in runs {
        for r in metrics {
            w.write_record([
                label.clone(),
                r.iter.to_string(),
                format!("{:.4}", r.train_loss),
                format!("{:.4}", r.val_loss),
                r.dropout_p.to_string(),
            ])
            .map_err(runtime)?;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn runtime(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}
