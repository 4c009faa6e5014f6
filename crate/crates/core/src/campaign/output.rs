//! On-disk campaign artifacts and the markdown report.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campaign::config::CampaignConfig;
use crate::campaign::CampaignReport;
use crate::corpus::CorpusRecord;
use crate::error::{CampaignError, ConfigError};
use crate::evaluation::DiversityCounts;
use crate::scenario::{Origin, ScenarioId};

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.md";
pub const METRICS_HEADER: &str = "iteration,cumulative_failures,failure_rate,alpha,origin";

/// Files covered by the output digest, in hashing order.
pub const DIGEST_FILES: [&str; 5] = [CONFIG_SNAPSHOT, FAILURES_FILE, CORPUS_FILE, METRICS_FILE, REPORT_FILE];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub schema_version: u32,
    pub id: ScenarioId,
    pub iteration: u64,
    pub params: Vec<f64>,
    pub parent: Option<ScenarioId>,
    pub origin: Origin,
    pub frames: u32,
    pub failure_kind: Option<String>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub cumulative_failures: u64,
    pub failure_rate: f64,
    pub alpha: Option<f64>,
    pub origin: Origin,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration,
            self.cumulative_failures,
            self.failure_rate,
            self.alpha.map(|a| a.to_string()).unwrap_or_default(),
            self.origin.as_str()
        )
    }

    pub fn from_csv(line: &str) -> Result<Self, CampaignError> {
        let bad = || CampaignError::Io(format!("malformed metrics row `{line}`"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let origin = match cols[4] {
            "initial_sample" => Origin::InitialSample,
            "random_mutation" => Origin::RandomMutation,
            "llm_mutation" => Origin::LlmMutation,
            _ => return Err(bad()),
        };
        Ok(Self {
            iteration: cols[0].parse().map_err(|_| bad())?,
            cumulative_failures: cols[1].parse().map_err(|_| bad())?,
            failure_rate: cols[2].parse().map_err(|_| bad())?,
            alpha: if cols[3].is_empty() { None } else { Some(cols[3].parse().map_err(|_| bad())?) },
            origin,
        })
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CampaignError {
    CampaignError::Io(format!("{}: {e}", path.display()))
}

/// Writers for one campaign's output directory.
pub struct OutputDir {
    root: PathBuf,
    failures: BufWriter<File>,
    metrics: BufWriter<File>,
}

impl OutputDir {
    pub fn create(root: &Path, config: &CampaignConfig) -> Result<Self, CampaignError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let snap = root.join(CONFIG_SNAPSHOT);
        std::fs::write(&snap, config.to_toml()).map_err(|e| io_err(&snap, e))?;
        let open = |name: &str| {
            let p = root.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e))
        };
        let failures = open(FAILURES_FILE)?;
        let mut metrics = open(METRICS_FILE)?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| io_err(root, e))?;
        // a stale checkpoint from an earlier run must not survive
        std::fs::write(root.join(CORPUS_FILE), "").map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf(), failures, metrics })
    }

    pub fn failure(&mut self, record: &FailureRecord) -> Result<(), CampaignError> {
        let line = serde_json::to_string(record).map_err(|e| CampaignError::Io(e.to_string()))?;
        writeln!(self.failures, "{line}").map_err(|e| io_err(&self.root, e))
    }

    pub fn metrics(&mut self, row: &MetricsRow) -> Result<(), CampaignError> {
        writeln!(self.metrics, "{}", row.to_csv()).map_err(|e| io_err(&self.root, e))
    }

    /// Replaces corpus.jsonl with the given snapshot.
    pub fn checkpoint(&self, records: &[CorpusRecord]) -> Result<(), CampaignError> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).map_err(|e| CampaignError::Io(e.to_string()))?);
            text.push('\n');
        }
        let p = self.root.join(CORPUS_FILE);
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))
    }

    /// Flushes everything, writes the report and returns the output digest.
    pub fn finish(mut self, report_md: &str) -> Result<String, CampaignError> {
        self.failures.flush().map_err(|e| io_err(&self.root, e))?;
        self.metrics.flush().map_err(|e| io_err(&self.root, e))?;
        let p = self.root.join(REPORT_FILE);
        std::fs::write(&p, report_md).map_err(|e| io_err(&p, e))?;
        output_digest(&self.root)
    }
}

/// SHA-256 over the campaign artifacts, hex encoded.
pub fn output_digest(root: &Path) -> Result<String, CampaignError> {
    let mut h = Sha256::new();
    for name in DIGEST_FILES {
        let p = root.join(name);
        let bytes = std::fs::read(&p).map_err(|e| io_err(&p, e))?;
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn read_failures(root: &Path) -> Result<Vec<FailureRecord>, CampaignError> {
    let p = root.join(FAILURES_FILE);
    let f = File::open(&p).map_err(|e| io_err(&p, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io_err(&p, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io_err(&p, e))?);
    }
    Ok(out)
}

pub fn read_metrics(root: &Path) -> Result<Vec<MetricsRow>, CampaignError> {
    let p = root.join(METRICS_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(io_err(&p, "missing header"));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRow::from_csv).collect()
}

pub fn read_snapshot(root: &Path) -> Result<CampaignConfig, CampaignError> {
    let p = root.join(CONFIG_SNAPSHOT);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| ConfigError::Io { path: p.display().to_string(), reason: e.to_string() })?;
    Ok(CampaignConfig::from_toml_str(&text, &[], None)?)
}

fn count(v: Option<usize>) -> String {
    v.map_or_else(|| "n/a".to_string(), |n| n.to_string())
}

/// The results table; `report` regenerates it from the artifacts alone.
pub fn render_results(tests: u64, failures: u64, diversity: Option<&DiversityCounts>, intervals: u32) -> String {
    let rate = if tests == 0 { 0.0 } else { failures as f64 / tests as f64 };
    let mut s = String::from("## Results\n\n");
    s.push_str("| tests | failures | failure rate | #Initial | #Terminal | #Entire |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    let _ = writeln!(
        s,
        "| {tests} | {failures} | {rate:.4} | {} | {} | {} |",
        count(diversity.map(|d| d.n_initial)),
        count(diversity.map(|d| d.n_terminal)),
        count(diversity.map(|d| d.n_entire)),
    );
    let _ = writeln!(s, "\nDiversity grid: {intervals} intervals per observation dimension, fitted to the failure states.");
    s
}

pub fn render_report(report: &CampaignReport, config: &CampaignConfig) -> String {
    let mut s = String::from("# Campaign report\n\n");
    let _ = writeln!(s, "- environment: {}", report.environment);
    let _ = writeln!(s, "- method: {}", report.method);
    let _ = writeln!(s, "- seed: {}", report.seed);
    let _ = writeln!(s, "- budget: {}", report.budget);
    let _ = writeln!(s, "- max frames: {}", config.campaign.max_frames.unwrap_or_default());
    if config.campaign.method.uses_llm() {
        let _ = writeln!(s, "- llm backend: {}", config.llm.backend.as_str());
    }
    s.push('\n');
    s.push_str(&render_results(
        report.tests_run,
        report.failures,
        report.diversity.as_ref(),
        config.campaign.diversity_intervals,
    ));
    s.push_str("\n## Generation\n\n");
    s.push_str("| llm calls | llm requests | random calls | skipped | added | discarded |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    let _ = writeln!(
        s,
        "| {} | {} | {} | {} | {} | {} |",
        report.llm_calls, report.llm_requests, report.random_calls, report.skipped, report.added, report.discarded
    );
    if let Some(t) = report.reward_threshold {
        let _ = writeln!(s, "\nBad-case thresholds: reward {t}, distance {}.", config.thresholds.distance);
        let b = &report.bad_cases;
        let _ = writeln!(
            s,
            "Bad cases: {} insufficient challenge, {} invalidity, {} excessive modification.",
            b.insufficient_challenge, b.invalidity, b.excessive_modification
        );
    }
    if let Some(a) = report.final_alpha {
        let _ = writeln!(s, "\n## Alpha\n\nfinal alpha: {a}\n");
        s.push_str("| iteration | alpha |\n|---|---|\n");
        for p in &report.alpha_trace {
            let _ = writeln!(s, "| {} | {} |", p.iteration, p.alpha);
        }
    }
    s.push_str("\n## Failures over time\n\n| iteration | cumulative failures |\n|---|---|\n");
    let n = report.failure_series.len();
    let step = (n / 10).max(1);
    for i in (step - 1..n).step_by(step) {
        let _ = writeln!(s, "| {} | {} |", i + 1, report.failure_series[i]);
    }
    if !n.is_multiple_of(step) {
        let _ = writeln!(s, "| {} | {} |", n, report.failure_series[n - 1]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_rows_round_trip() {
        let row = MetricsRow {
            iteration: 7,
            cumulative_failures: 2,
            failure_rate: 2.0 / 7.0,
            alpha: Some(25.0 / 0.7),
            origin: Origin::LlmMutation,
        };
        assert_eq!(MetricsRow::from_csv(&row.to_csv()).unwrap(), row);
        let plain = MetricsRow { alpha: None, origin: Origin::InitialSample, ..row };
        assert_eq!(MetricsRow::from_csv(&plain.to_csv()).unwrap(), plain);
        assert!(MetricsRow::from_csv("1,2,3").is_err());
    }

    #[test]
    fn results_table_marks_missing_diversity() {
        let s = render_results(10, 0, None, 10);
        assert!(s.contains("| 10 | 0 | 0.0000 | n/a | n/a | n/a |"));
        let d = DiversityCounts { n_initial: 1, n_terminal: 2, n_entire: 3 };
        assert!(render_results(4, 1, Some(&d), 10).contains("| 4 | 1 | 0.2500 | 1 | 2 | 3 |"));
    }
}
