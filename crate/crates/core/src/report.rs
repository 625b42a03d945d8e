//! Run reports: metadata, baseline and final metrics, round history, and
//! renderings as a text table, CSV, or JSON lines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compress::{count_flops, count_params};
use crate::driver::{CompressionHistory, LambdaSearch, RoundStatus};
use crate::error::{Error, Result};
use crate::nn::ArchitectureDescriptor;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema: u32,
    /// FNV-1a of the resolved configuration, hex.
    pub config_hash: String,
    pub data_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    pub version: String,
    pub dataset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub params: u64,
    pub flops: u64,
    pub widths: Vec<usize>,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl ModelMetrics {
    pub fn of(arch: &ArchitectureDescriptor, validation_accuracy: Option<f64>, test_accuracy: Option<f64>) -> Result<Self> {
        Ok(Self {
            params: count_params(arch)?,
            flops: count_flops(arch)?,
            widths: arch.widths(),
            validation_accuracy,
            test_accuracy,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: RunMeta,
    pub base_arch: ArchitectureDescriptor,
    pub final_arch: ArchitectureDescriptor,
    pub baseline: ModelMetrics,
    pub final_metrics: ModelMetrics,
    pub compression_ratio: f64,
    pub flops_speedup: f64,
    pub lambda0: f64,
    #[serde(default)]
    pub lambda_search: Option<LambdaSearch>,
    pub history: CompressionHistory,
}

impl Report {
    pub fn new(
        meta: RunMeta,
        base_arch: ArchitectureDescriptor,
        final_arch: ArchitectureDescriptor,
        baseline: ModelMetrics,
        final_metrics: ModelMetrics,
        lambda0: f64,
        lambda_search: Option<LambdaSearch>,
        history: CompressionHistory,
    ) -> Self {
        Self {
            compression_ratio: baseline.params as f64 / final_metrics.params as f64,
            flops_speedup: baseline.flops as f64 / final_metrics.flops as f64,
            meta,
            base_arch,
            final_arch,
            baseline,
            final_metrics,
            lambda0,
            lambda_search,
            history,
        }
    }

    /// Recomputes every derived number from the embedded architectures.
    pub fn check_consistency(&self) -> Result<()> {
        let bp = count_params(&self.base_arch)?;
        let fp = count_params(&self.final_arch)?;
        let bf = count_flops(&self.base_arch)?;
        let ff = count_flops(&self.final_arch)?;
        let mismatch = |what: &str, stored: f64, recomputed: f64| {
            Error::InvalidArgument(format!("report {what} {stored} disagrees with recomputed {recomputed}"))
        };
        if (bp, bf, fp, ff) != (self.baseline.params, self.baseline.flops, self.final_metrics.params, self.final_metrics.flops) {
            return Err(Error::InvalidArgument(
                "stored parameter or FLOPs counts disagree with the embedded architectures".into(),
            ));
        }
        let cr = bp as f64 / fp as f64;
        if (cr - self.compression_ratio).abs() > 1e-9 {
            return Err(mismatch("compression ratio", self.compression_ratio, cr));
        }
        let sp = bf as f64 / ff as f64;
        if (sp - self.flops_speedup).abs() > 1e-9 {
            return Err(mismatch("FLOPs speedup", self.flops_speedup, sp));
        }
        if !self.history.records.is_empty() && self.history.baseline_size != bp {
            return Err(mismatch("baseline size", self.history.baseline_size as f64, bp as f64));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.meta.schema != REPORT_SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA})",
                r.meta.schema
            )));
        }
        Ok(r)
    }

    /// One CSV row per completed or diverged round.
    pub fn history_csv(&self) -> String {
        let mut out = String::from(
            "round,lambda,sparsity,size_before,size_after,flops_before,flops_after,validation_accuracy,pruned_validation_accuracy,widths_after,status\n",
        );
        for r in &self.history.records {
            let status = match r.status {
                RoundStatus::Completed => "completed",
                RoundStatus::Diverged { .. } => "diverged",
            };
            let acc = |a: Option<f64>| a.map_or(String::new(), |a| format!("{a:.6}"));
            let _ = writeln!(
                out,
                "{},{:e},{:.6},{},{},{},{},{},{},{},{}",
                r.round,
                r.lambda,
                r.sparsity,
                r.size_before,
                r.size_after,
                r.flops_before,
                r.flops_after,
                acc(r.validation_accuracy),
                acc(r.pruned_validation_accuracy),
                join_widths(&r.widths_after),
                status
            );
        }
        out
    }

    /// Baseline and final rows: architecture, CR, FLOPs speedup, accuracy.
    pub fn summary_csv(&self) -> String {
        let acc = |m: &ModelMetrics| m.test_accuracy.map_or(String::new(), |a| format!("{a:.6}"));
        format!(
            "model,architecture,params,flops,cr,flops_speedup,test_accuracy\nbaseline,{},{},{},1,1,{}\npruned,{},{},{},{:.6},{:.6},{}\n",
            join_widths(&self.baseline.widths),
            self.baseline.params,
            self.baseline.flops,
            acc(&self.baseline),
            join_widths(&self.final_metrics.widths),
            self.final_metrics.params,
            self.final_metrics.flops,
            self.compression_ratio,
            self.flops_speedup,
            acc(&self.final_metrics),
        )
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let pct = |a: Option<f64>| a.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:<28} {:>8} {:>12} {:>7} {:>7} {:>8}", "model", "architecture", "params", "FLOPs", "CR", "FLOPs×", "acc");
        let _ = writeln!(
            out,
            "{:<10} {:<28} {:>8} {:>12} {:>7} {:>7} {:>8}",
            "baseline",
            join_widths(&self.baseline.widths),
            self.baseline.params,
            self.baseline.flops,
            "1.00",
            "1.00",
            pct(self.baseline.test_accuracy)
        );
        let _ = writeln!(
            out,
            "{:<10} {:<28} {:>8} {:>12} {:>7.2} {:>7.2} {:>8}",
            "pruned",
            join_widths(&self.final_metrics.widths),
            self.final_metrics.params,
            self.final_metrics.flops,
            self.compression_ratio,
            self.flops_speedup,
            pct(self.final_metrics.test_accuracy)
        );
        let _ = writeln!(out, "rounds: {}, lambda0: {:e}", self.history.records.len(), self.lambda0);
        out
    }

    /// One JSON object per round, then a summary object.
    pub fn json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.history.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "baseline": self.baseline,
                "final": self.final_metrics,
                "compression_ratio": self.compression_ratio,
                "flops_speedup": self.flops_speedup,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

pub fn join_widths(widths: &[usize]) -> String {
    widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
}
