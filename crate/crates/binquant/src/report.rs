//! CSV reports, the JSON run summary and the `report` table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use binquant_core::pipeline::MetricRow;
use binquant_core::solver::{bits_per_weight, QuantizedMatrix, SolveTrace, StepKind};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{RunError, RunResult};
use crate::io::write_atomic;

pub const CSV_HEADER: [&str; 5] = ["layer", "block", "iter", "metric", "value"];
pub const SUMMARY_FILE: &str = "summary.json";

/// One CSV line. `iter` is empty for rows not tied to a solver iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub layer: usize,
    pub block: usize,
    pub iter: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Trace rows for one layer: the starting point at iteration 0, then per
/// step `<kind>.objective`, `<kind>.amp_objective`, `<kind>.accept`, plus
/// `b_row.row` and `alpha_c.fallbacks` where they apply.
pub fn trace_rows(layer: usize, q: &QuantizedMatrix) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for t in q.traces() {
        let mut push = |iter: usize, metric: String, value: f64| {
            rows.push(CsvRow {
                layer,
                block: t.block,
                iter: Some(iter),
                metric,
                value,
            })
        };
        push(0, "init.objective".into(), t.initial_objective);
        if let Some(a) = t.initial_amp_objective {
            push(0, "init.amp_objective".into(), a);
        }
        for r in &t.records {
            let kind = r.kind.as_str();
            push(r.iteration, format!("{kind}.objective"), r.objective);
            if let Some(a) = r.amp_objective {
                push(r.iteration, format!("{kind}.amp_objective"), a);
            }
            push(r.iteration, format!("{kind}.accept"), r.accept_ratio);
            if let Some(row) = r.row {
                push(r.iteration, format!("{kind}.row"), row as f64);
            }
            if r.kind == StepKind::AlphaC {
                push(r.iteration, format!("{kind}.fallbacks"), r.fallbacks as f64);
            }
        }
    }
    rows
}

pub fn metric_rows(metrics: &[MetricRow]) -> Vec<CsvRow> {
    metrics
        .iter()
        .map(|m| CsvRow {
            layer: m.layer,
            block: m.block,
            iter: None,
            metric: m.metric.into(),
            value: m.value,
        })
        .collect()
}

pub fn csv_bytes(rows: &[CsvRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        let iter = r.iter.map(|i| i.to_string()).unwrap_or_default();
        w.write_record([
            r.layer.to_string(),
            r.block.to_string(),
            iter,
            r.metric.clone(),
            r.value.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> RunResult<()> {
    write_atomic(path, &csv_bytes(rows)).map_err(|e| RunError::file("write", path, e))
}

pub fn read_csv(path: &Path) -> RunResult<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::file("report", path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| RunError::file("report", path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_HEADER {
        return Err(RunError::file("report", path, "unexpected CSV header"));
    }
    r.deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| RunError::file("report", path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub alpha_r: Option<f64>,
    pub alpha_c: Option<f64>,
    pub b_row: Option<f64>,
}

impl Acceptance {
    fn of(t: &SolveTrace) -> Self {
        Self {
            alpha_r: t.mean_acceptance(StepKind::AlphaR),
            alpha_c: t.mean_acceptance(StepKind::AlphaC),
            b_row: t.mean_acceptance(StepKind::BRow),
        }
    }

    fn mean<'a>(items: impl Iterator<Item = &'a Acceptance> + Clone) -> Self {
        fn avg(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let (s, n) = v.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            (n > 0).then(|| s / n as f64)
        }
        Self {
            alpha_r: avg(items.clone().map(|a| a.alpha_r)),
            alpha_c: avg(items.clone().map(|a| a.alpha_c)),
            b_row: avg(items.map(|a| a.b_row)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: usize,
    pub col_start: usize,
    pub width: usize,
    pub iterations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub alpha_c_fallbacks: usize,
    pub acceptance: Acceptance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub block: usize,
    pub role: String,
    pub mode: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bits_per_weight: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub blocks: Vec<BlockSummary>,
}

impl LayerSummary {
    pub fn new(layer: usize, block: usize, role: &str, mode: &str, q: &QuantizedMatrix, scale_bits: usize) -> Self {
        let blocks: Vec<BlockSummary> = q
            .blocks
            .iter()
            .map(|b| BlockSummary {
                block: b.trace.block,
                col_start: b.col_start,
                width: b.width(),
                iterations: b.trace.iterations,
                initial_objective: b.trace.initial_objective,
                final_objective: b.trace.final_objective(),
                alpha_c_fallbacks: b.trace.alpha_c_fallbacks(),
                acceptance: Acceptance::of(&b.trace),
            })
            .collect();
        Self {
            layer,
            block,
            role: role.into(),
            mode: mode.into(),
            d_in: q.d_in,
            d_out: q.d_out,
            bits_per_weight: bits_per_weight(q.d_in, q.d_out, q.block_width, scale_bits),
            initial_objective: blocks.iter().map(|b| b.initial_objective).sum(),
            final_objective: q.final_objective(),
            blocks,
        }
    }
}

/// Contents of `summary.json`. `created_unix` is the only field that
/// differs between two runs of the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub command: String,
    pub seed: u64,
    pub mode: String,
    pub amp: String,
    pub bits_per_weight: f64,
    pub layers: Vec<LayerSummary>,
    pub end_to_end_mse: Option<f64>,
    pub config: RunConfig,
    pub created_unix: u64,
}

impl Summary {
    pub fn new(command: &str, config: &RunConfig, layers: Vec<LayerSummary>, end_to_end_mse: Option<f64>) -> Self {
        let weights: usize = layers.iter().map(|l| l.d_in * l.d_out).sum();
        let bits: f64 = layers
            .iter()
            .map(|l| l.bits_per_weight * (l.d_in * l.d_out) as f64)
            .sum();
        Self {
            command: command.into(),
            seed: config.seed,
            mode: config.mode.clone(),
            amp: config.amp.clone(),
            bits_per_weight: if weights == 0 { 0.0 } else { bits / weights as f64 },
            layers,
            end_to_end_mse,
            config: config.clone(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> RunResult<()> {
        let path = dir.join(SUMMARY_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| RunError::internal("write", e))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes()).map_err(|e| RunError::file("write", &path, e))
    }

    pub fn read(dir: &Path) -> RunResult<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| RunError::file("report", &path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::file("report", &path, e))
    }

    pub fn initial_objective(&self) -> f64 {
        self.layers.iter().map(|l| l.initial_objective).sum()
    }

    pub fn final_objective(&self) -> f64 {
        self.layers.iter().map(|l| l.final_objective).sum()
    }

    pub fn acceptance(&self) -> Acceptance {
        Acceptance::mean(self.layers.iter().flat_map(|l| &l.blocks).map(|b| &b.acceptance))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

/// Renders one table row per run directory.
pub fn render(runs: &[(PathBuf, Summary)]) -> String {
    let header = [
        "run", "command", "mode", "amp", "layers", "bits/w", "objective", "final", "e2e_mse", "acc_r",
        "acc_c", "acc_b",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (dir, s) in runs {
        let acc = s.acceptance();
        rows.push(vec![
            dir.display().to_string(),
            s.command.clone(),
            s.mode.clone(),
            s.amp.clone(),
            s.layers.len().to_string(),
            format!("{:.4}", s.bits_per_weight),
            format!("{:.6e}", s.initial_objective()),
            format!("{:.6e}", s.final_objective()),
            s.end_to_end_mse.map(|m| format!("{m:.6e}")).unwrap_or_else(|| "-".into()),
            opt(acc.alpha_r),
            opt(acc.alpha_c),
            opt(acc.b_row),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
