//! Experiment runner: config loading, ensembles and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use asclt_core::asclt::Verdict;
use serde::Serialize;

pub mod config;
pub mod experiments;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{Note, Outcome, VerdictLine};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("replicate {id}: {source}")]
    Replicate { id: u64, source: asclt_core::Error },

    #[error(transparent)]
    Core(#[from] asclt_core::Error),
}

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status derived from the verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Consistent,
    Flagged,
}

impl Overall {
    pub fn exit_code(self) -> i32 {
        match self {
            Overall::Consistent => 0,
            Overall::Flagged => 2,
        }
    }
}

/// Contents of `report.json`. Contains nothing that depends on the worker
/// count, the output path or the clock.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub experiment: Experiment,
    pub description: &'static str,
    pub config: ExperimentConfig,
    pub results: serde_json::Value,
    pub verdicts: Vec<VerdictLine>,
    pub notes: Vec<Note>,
    pub overall: Overall,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let r = &self.report;
        let mut s = format!("{} ({})\n{}\n\n", r.experiment, r.tool_version, r.description);
        for v in &r.verdicts {
            let tag = match v.verdict {
                Verdict::Consistent => "consistent",
                Verdict::Flagged => "FLAGGED",
                Verdict::NotApplicable => "n/a",
            };
            let _ = writeln!(s, "[{tag}] {}: {}", v.name, v.detail);
        }
        if !r.notes.is_empty() {
            s.push_str("\ninformational:\n");
            for n in &r.notes {
                let _ = writeln!(s, "[{}] {}: {}", if n.holds { "holds" } else { "fails" }, n.name, n.detail);
            }
        }
        let _ = writeln!(s, "\noverall: {:?}", r.overall);
        s
    }

    /// Writes `report.json`, `metadata.json`, `summary.txt` and the CSV files.
    pub fn write(&self, dir: &Path, workers: Option<usize>) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(io(&p))
        };
        put("report.json", &self.report_json())?;
        put("summary.txt", &self.summary())?;
        for (name, text) in &self.files {
            put(name, text)?;
        }
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "timestamp_unix": stamp,
            "workers": workers.unwrap_or_else(rayon::current_num_threads),
            "output_dir": dir.display().to_string(),
        });
        put("metadata.json", &format!("{}\n", serde_json::to_string_pretty(&meta).expect("json")))
    }
}

/// Runs one experiment on a pool of `cfg.workers` threads (the global pool
/// when unset). Writes nothing.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let outcome = match cfg.workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Config {
                field: "workers".into(),
                message: e.to_string(),
            })?
            .install(|| experiments::run_experiment(cfg))?,
        None => experiments::run_experiment(cfg)?,
    };
    let flagged = outcome.verdicts.iter().any(|v| v.verdict == Verdict::Flagged);
    Ok(RunOutput {
        report: Report {
            schema_version: config::SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            experiment: cfg.experiment,
            description: cfg.experiment.description(),
            config: cfg.clone(),
            results: outcome.results,
            verdicts: outcome.verdicts,
            notes: outcome.notes,
            overall: if flagged { Overall::Flagged } else { Overall::Consistent },
        },
        files: outcome.files,
    })
}

/// Experiment names, descriptions and default configs in a fixed order.
pub fn list_experiments() -> String {
    let mut s = String::new();
    for e in Experiment::ALL {
        let def = serde_json::to_string(&config::default_config(e)).expect("json");
        let _ = writeln!(s, "{} → {}\n  default: {def}", e.name(), e.description());
    }
    s
}
