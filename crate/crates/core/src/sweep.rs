//! Parameter sweeps over many seeds, run in parallel.
//!
//! Replicate `r` of every cell uses `derive_seed(master, r)`, so all
//! algorithms and axis values at the same replicate share one channel
//! realization and can be compared pairwise.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::channel::SnrPreset;
use crate::error::{Error, Result};
use crate::metrics::{psnr_proxy, throughput, Level, RunRecord};
use crate::sim::{derive_seed, run, Algorithm, ChannelConfig, RunConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "XORCAST_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum AxisValues {
    Loss(Vec<f64>),
    Delay(Vec<f64>),
    Algorithm(Vec<Algorithm>),
    Snr(Vec<SnrPreset>),
}

impl AxisValues {
    pub fn len(&self) -> usize {
        match self {
            AxisValues::Loss(v) | AxisValues::Delay(v) => v.len(),
            AxisValues::Algorithm(v) => v.len(),
            AxisValues::Snr(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses a comma-separated list for the named axis.
    pub fn parse(axis: &str, values: &str) -> Result<Self> {
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let floats = || -> Result<Vec<f64>> {
            items
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad value `{s}`: {e}")))
                })
                .collect()
        };
        let parsed = match axis.to_ascii_lowercase().as_str() {
            "loss" => AxisValues::Loss(floats()?),
            "delay" => AxisValues::Delay(floats()?),
            "algorithm" => AxisValues::Algorithm(
                items
                    .iter()
                    .map(|s| s.parse().map_err(Error::Config))
                    .collect::<Result<_>>()?,
            ),
            "snr" => AxisValues::Snr(
                items
                    .iter()
                    .map(|s| s.parse().map_err(Error::Config))
                    .collect::<Result<_>>()?,
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown axis `{other}` (expected loss, delay, algorithm or snr)"
                )))
            }
        };
        if parsed.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        Ok(parsed)
    }
}

/// Named experiment grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// i.i.d. loss from 1% to 20% at a 100 ms budget.
    Model1,
    /// Gilbert-Elliot channel at each SNR preset.
    Model2,
    /// Delay budgets from 50 ms to 200 ms at 9.4% i.i.d. loss.
    DelaySweep,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model1" => Ok(Preset::Model1),
            "model2" => Ok(Preset::Model2),
            "delay-sweep" | "delay" => Ok(Preset::DelaySweep),
            _ => Err(format!("unknown preset `{s}` (expected model1, model2 or delay-sweep)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Model1 => "model1",
            Preset::Model2 => "model2",
            Preset::DelaySweep => "delay-sweep",
        })
    }
}

impl Preset {
    pub const DEFAULT_SEEDS: usize = 20;

    pub fn spec(self, mut base: RunConfig) -> SweepSpec {
        let values = match self {
            Preset::Model1 => {
                base.delay_budget = 100.0;
                base.traffic.delay_budget = 100.0;
                AxisValues::Loss((1..=20).map(|p| p as f64 / 100.0).collect())
            }
            Preset::Model2 => AxisValues::Snr(SnrPreset::ALL.to_vec()),
            Preset::DelaySweep => {
                base.channel = ChannelConfig::iid(0.094);
                AxisValues::Delay(vec![50.0, 75.0, 100.0, 125.0, 150.0, 175.0, 200.0])
            }
        };
        SweepSpec::new(base, values, Self::DEFAULT_SEEDS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub values: AxisValues,
    pub seeds: usize,
    /// Algorithms run at every cell unless the axis is `Algorithm`.
    pub algorithms: Vec<Algorithm>,
}

impl SweepSpec {
    pub fn new(base: RunConfig, values: AxisValues, seeds: usize) -> Self {
        SweepSpec {
            base,
            values,
            seeds,
            algorithms: Algorithm::BASELINE_SET.to_vec(),
        }
    }

    /// Every run of the sweep, in `run_id` order.
    pub fn configs(&self) -> Result<Vec<RunConfig>> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        let cells: Vec<RunConfig> = match &self.values {
            AxisValues::Loss(v) => v
                .iter()
                .map(|&loss| RunConfig {
                    channel: ChannelConfig::iid(loss),
                    ..self.base.clone()
                })
                .collect(),
            AxisValues::Delay(v) => v
                .iter()
                .map(|&budget| {
                    let mut c = self.base.clone();
                    c.delay_budget = budget;
                    c.traffic.delay_budget = budget;
                    c
                })
                .collect(),
            AxisValues::Snr(v) => v
                .iter()
                .map(|&p| {
                    let oracle = matches!(
                        self.base.channel,
                        ChannelConfig::GilbertElliot { oracle_state: true, .. }
                    );
                    let mut channel = ChannelConfig::preset(p);
                    if let ChannelConfig::GilbertElliot { oracle_state, .. } = &mut channel {
                        *oracle_state = oracle;
                    }
                    RunConfig {
                        channel,
                        ..self.base.clone()
                    }
                })
                .collect(),
            AxisValues::Algorithm(v) => v
                .iter()
                .map(|&algorithm| RunConfig {
                    algorithm,
                    ..self.base.clone()
                })
                .collect(),
        };
        let algorithms: Vec<Option<Algorithm>> = match self.values {
            AxisValues::Algorithm(_) => vec![None],
            _ => self.algorithms.iter().copied().map(Some).collect(),
        };
        let mut out = Vec::with_capacity(cells.len() * algorithms.len() * self.seeds);
        for cell in &cells {
            for alg in &algorithms {
                for r in 0..self.seeds {
                    let mut c = cell.clone();
                    if let Some(a) = alg {
                        c.algorithm = *a;
                    }
                    c.seed = derive_seed(self.base.seed, r as u64);
                    c.validate()?;
                    out.push(c);
                }
            }
        }
        Ok(out)
    }
}

/// Runs configurations in parallel and labels the results with their
/// position in `configs`.
pub fn run_all(configs: &[RunConfig]) -> Result<Vec<RunRecord>> {
    let job = || {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                run(c).map(|metrics| RunRecord {
                    run_id: i as u64,
                    seed: c.seed,
                    algorithm: c.algorithm.to_string(),
                    loss_param: c.channel.loss_param(c.traffic.packet_size),
                    delay_budget: c.delay_budget,
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(job),
        None => job(),
    }
}

fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    run_all(&spec.configs()?)
}

/// Mean and standard error over the seeds of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub algorithm: String,
    pub loss_param: f64,
    pub delay_budget: f64,
    pub runs: usize,
    pub psnr_proxy: (f64, f64),
    pub app_tput: (f64, f64),
    pub mac_tput: (f64, f64),
    pub mean_txq: (f64, f64),
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups runs by (loss, budget, algorithm) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<CellSummary>> {
    let mut order: Vec<(u64, u64, String)> = Vec::new();
    let mut groups: BTreeMap<(u64, u64, String), Vec<&RunRecord>> = BTreeMap::new();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.run_id);
    for r in sorted {
        let key = (r.loss_param.to_bits(), r.delay_budget.to_bits(), r.algorithm.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let runs = &groups[&key];
            let mut proxy = Vec::new();
            let mut app = Vec::new();
            let mut mac = Vec::new();
            let mut txq = Vec::new();
            for r in runs {
                let m = &r.metrics;
                proxy.push(m.mean_psnr_proxy()?);
                app.push(throughput(m, Level::App, m.duration)?);
                mac.push(throughput(m, Level::Mac, m.duration)?);
                txq.push(m.mean_tx_queue);
            }
            Ok(CellSummary {
                algorithm: key.2.clone(),
                loss_param: f64::from_bits(key.0),
                delay_budget: f64::from_bits(key.1),
                runs: runs.len(),
                psnr_proxy: mean_stderr(&proxy),
                app_tput: mean_stderr(&app),
                mac_tput: mean_stderr(&mac),
                mean_txq: mean_stderr(&txq),
            })
        })
        .collect()
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "algorithm",
    "loss_param",
    "delay_budget_ms",
    "runs",
    "psnr_proxy_mean",
    "psnr_proxy_stderr",
    "app_tput_mean",
    "app_tput_stderr",
    "mac_tput_mean",
    "mac_tput_stderr",
    "mean_txq_mean",
    "mean_txq_stderr",
];

pub fn render_summary(cells: &[CellSummary]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.algorithm,
            c.loss_param,
            c.delay_budget,
            c.runs,
            c.psnr_proxy.0,
            c.psnr_proxy.1,
            c.app_tput.0,
            c.app_tput.1,
            c.mac_tput.0,
            c.mac_tput.1,
            c.mean_txq.0,
            c.mean_txq.1,
        );
    }
    out
}

/// Per-flow quality proxies of one run, for quick inspection.
pub fn flow_proxies(record: &RunRecord) -> Result<Vec<(u32, f64)>> {
    record
        .metrics
        .per_flow
        .keys()
        .map(|&f| psnr_proxy(&record.metrics, f).map(|p| (f, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> RunConfig {
        RunConfig {
            duration: 500.0,
            ..RunConfig::default()
        }
    }

    #[test]
    fn grid_size_is_cartesian() {
        let spec = SweepSpec::new(small_base(), AxisValues::Loss(vec![0.01, 0.1]), 3);
        assert_eq!(spec.configs().unwrap().len(), 2 * 4 * 3);
        let spec = SweepSpec::new(
            small_base(),
            AxisValues::Algorithm(vec![Algorithm::Ncv, Algorithm::Nct]),
            3,
        );
        assert_eq!(spec.configs().unwrap().len(), 2 * 3);
    }

    #[test]
    fn replicates_share_seeds_across_cells() {
        let spec = SweepSpec::new(small_base(), AxisValues::Delay(vec![50.0, 200.0]), 2);
        let configs = spec.configs().unwrap();
        let seeds: Vec<u64> = configs.iter().map(|c| c.seed).collect();
        assert_eq!(seeds[0], seeds[2]);
        assert_eq!(seeds[1], seeds[9]);
        assert_ne!(seeds[0], seeds[1]);
    }

    #[test]
    fn empty_or_zero_rejected() {
        assert!(SweepSpec::new(small_base(), AxisValues::Loss(vec![]), 1)
            .configs()
            .is_err());
        assert!(SweepSpec::new(small_base(), AxisValues::Loss(vec![0.1]), 0)
            .configs()
            .is_err());
        assert!(AxisValues::parse("loss", "").is_err());
        assert!(AxisValues::parse("speed", "1").is_err());
        assert!(AxisValues::parse("loss", "0.1,x").is_err());
    }

    #[test]
    fn parse_axis_values() {
        assert_eq!(
            AxisValues::parse("loss", "0.01, 0.1").unwrap(),
            AxisValues::Loss(vec![0.01, 0.1])
        );
        assert_eq!(
            AxisValues::parse("snr", "snr3,9").unwrap(),
            AxisValues::Snr(vec![SnrPreset::Snr3, SnrPreset::Snr9])
        );
        assert_eq!(
            AxisValues::parse("algorithm", "noNC,NCV-MWIS").unwrap(),
            AxisValues::Algorithm(vec![Algorithm::NoNc, Algorithm::NcvMwis])
        );
    }

    #[test]
    fn presets_cover_their_axes() {
        let s = Preset::Model1.spec(RunConfig::default());
        assert_eq!(s.values.len(), 20);
        assert_eq!(s.base.delay_budget, 100.0);
        assert_eq!(Preset::Model2.spec(RunConfig::default()).values.len(), 4);
        match Preset::DelaySweep.spec(RunConfig::default()).values {
            AxisValues::Delay(v) => assert_eq!((v[0], *v.last().unwrap()), (50.0, 200.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summary_groups_cells() {
        let spec = SweepSpec::new(small_base(), AxisValues::Loss(vec![0.05]), 2);
        let records = run_sweep(&spec).unwrap();
        let cells = summarize(&records).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.runs == 2));
        assert_eq!(render_summary(&cells).lines().count(), 5);
    }
}
