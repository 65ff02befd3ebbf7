//! Per-run counters, quality/throughput views and the results CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Millis;

/// Header of the results CSV.
pub const REPORT_COLUMNS: [&str; 17] = [
    "run_id",
    "seed",
    "algorithm",
    "loss_param",
    "delay_budget_ms",
    "flow",
    "offered",
    "on_time",
    "late",
    "expired",
    "utility_offered",
    "utility_delivered",
    "psnr_proxy",
    "app_tput_pps",
    "mac_tput_pps",
    "mean_txq",
    "mean_vbuf",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowMetrics {
    pub offered: u64,
    pub delivered_on_time: u64,
    pub delivered_late: u64,
    pub expired: u64,
    pub utility_offered: f64,
    pub utility_delivered: f64,
    /// Packets of this flow recovered at any node, on time or not.
    pub mac_delivered: u64,
}

impl FlowMetrics {
    pub fn is_conserved(&self) -> bool {
        self.delivered_on_time + self.delivered_late + self.expired == self.offered
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub per_flow: BTreeMap<u32, FlowMetrics>,
    pub mac_packets_delivered: u64,
    pub app_packets_delivered: u64,
    /// Slots in which a code was broadcast.
    pub transmissions: u64,
    /// Received codes that decoded nothing at the receiving node.
    pub undecodable_receptions: u64,
    pub mean_tx_queue: f64,
    pub mean_virtual_buffer: f64,
    /// Traffic generation window the throughputs are normalized by.
    pub duration: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    App,
    Mac,
}

impl RunMetrics {
    pub fn utility_offered(&self) -> f64 {
        self.per_flow.values().map(|f| f.utility_offered).sum()
    }

    pub fn utility_delivered(&self) -> f64 {
        self.per_flow.values().map(|f| f.utility_delivered).sum()
    }

    pub fn offered(&self) -> u64 {
        self.per_flow.values().map(|f| f.offered).sum()
    }

    /// Average of the per-flow quality proxies.
    pub fn mean_psnr_proxy(&self) -> Result<f64> {
        if self.per_flow.is_empty() {
            return Err(Error::Metrics("no flows".into()));
        }
        let mut sum = 0.0;
        for flow in self.per_flow.keys() {
            sum += psnr_proxy(self, *flow)?;
        }
        Ok(sum / self.per_flow.len() as f64)
    }

    /// Conservation and ordering invariants every finished run satisfies.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (flow, f) in &self.per_flow {
            if !f.is_conserved() {
                return Err(format!(
                    "flow {flow}: on_time {} + late {} + expired {} != offered {}",
                    f.delivered_on_time, f.delivered_late, f.expired, f.offered
                ));
            }
            if f.utility_delivered > f.utility_offered + 1e-9 {
                return Err(format!("flow {flow}: delivered utility exceeds offered"));
            }
        }
        if self.app_packets_delivered > self.mac_packets_delivered {
            return Err("app deliveries exceed mac deliveries".into());
        }
        let on_time: u64 = self.per_flow.values().map(|f| f.delivered_on_time).sum();
        if on_time != self.app_packets_delivered {
            return Err("per-flow on-time counts disagree with app total".into());
        }
        Ok(())
    }
}

/// Fraction of a flow's distortion weight delivered on time.
pub fn psnr_proxy(metrics: &RunMetrics, flow: u32) -> Result<f64> {
    let f = metrics
        .per_flow
        .get(&flow)
        .ok_or_else(|| Error::Metrics(format!("unknown flow {flow}")))?;
    if f.utility_offered <= 0.0 {
        return Err(Error::Metrics(format!("flow {flow} offered no utility")));
    }
    Ok(f.utility_delivered / f.utility_offered)
}

/// Aggregate packets per second at the given layer.
pub fn throughput(metrics: &RunMetrics, level: Level, duration: Millis) -> Result<f64> {
    if duration.is_nan() || duration <= 0.0 {
        return Err(Error::Metrics(format!(
            "throughput needs a positive duration, got {duration}"
        )));
    }
    let count = match level {
        Level::App => metrics.app_packets_delivered,
        Level::Mac => metrics.mac_packets_delivered,
    };
    Ok(count as f64 / (duration / 1000.0))
}

/// One finished run with the labels that go into the report.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: u64,
    pub seed: u64,
    pub algorithm: String,
    pub loss_param: f64,
    pub delay_budget: Millis,
    pub metrics: RunMetrics,
}

fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

fn row(rec: &RunRecord, flow: &str, f: &FlowMetrics, out: &mut String) {
    let secs = rec.metrics.duration / 1000.0;
    let rate = |n: u64| if secs > 0.0 { n as f64 / secs } else { 0.0 };
    let proxy = if f.utility_offered > 0.0 {
        fmt_f(f.utility_delivered / f.utility_offered)
    } else {
        String::new()
    };
    let cells = [
        rec.run_id.to_string(),
        rec.seed.to_string(),
        rec.algorithm.clone(),
        fmt_f(rec.loss_param),
        fmt_f(rec.delay_budget),
        flow.to_string(),
        f.offered.to_string(),
        f.delivered_on_time.to_string(),
        f.delivered_late.to_string(),
        f.expired.to_string(),
        fmt_f(f.utility_offered),
        fmt_f(f.utility_delivered),
        proxy,
        fmt_f(rate(f.delivered_on_time)),
        fmt_f(rate(f.mac_delivered)),
        fmt_f(rec.metrics.mean_tx_queue),
        fmt_f(rec.metrics.mean_virtual_buffer),
    ];
    let _ = writeln!(out, "{}", cells.join(","));
}

/// Renders the report: one row per (run, flow) plus an `all` row per run.
/// Runs appear sorted by `run_id`.
pub fn render_report(records: &[RunRecord]) -> String {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.run_id);
    let mut out = String::new();
    let _ = writeln!(out, "{}", REPORT_COLUMNS.join(","));
    for rec in sorted {
        let mut all = FlowMetrics::default();
        for (flow, f) in &rec.metrics.per_flow {
            row(rec, &flow.to_string(), f, &mut out);
            all.offered += f.offered;
            all.delivered_on_time += f.delivered_on_time;
            all.delivered_late += f.delivered_late;
            all.expired += f.expired;
            all.utility_offered += f.utility_offered;
            all.utility_delivered += f.utility_delivered;
            all.mac_delivered += f.mac_delivered;
        }
        row(rec, "all", &all, &mut out);
    }
    out
}

pub fn write_report(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(render_report(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}
