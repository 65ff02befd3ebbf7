//! TOML run configuration.
//!
//! Every key is optional; missing keys keep the defaults of [`RunConfig`].
//!
//! ```toml
//! [run]
//! duration_ms = 30000
//! seed = 7
//!
//! [traffic]
//! rate_bps = 70000
//! delay_budget_ms = 100
//!
//! [channel]
//! model = "iid"        # or "gilbert-elliot"
//! loss_rate = 0.094
//!
//! [algorithm]
//! name = "NCVD"
//! ncvd_depth = "unbounded"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::{ber_from_packet_loss, SnrPreset};
use crate::coding::Depth;
use crate::error::{Error, Result};
use crate::sim::{ChannelConfig, RunConfig};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    traffic: TrafficSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    algorithm: AlgorithmSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    duration_ms: Option<f64>,
    seed: Option<u64>,
    num_clients: Option<usize>,
    link_rate_bps: Option<f64>,
    rtt_ms: Option<f64>,
    delay_mean_ms: Option<f64>,
    ack_loss: Option<f64>,
    stagger_flows: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSection {
    rate_bps: Option<f64>,
    fps: Option<f64>,
    gop: Option<u32>,
    packet_size: Option<u32>,
    delay_budget_ms: Option<f64>,
    delta_i: Option<f64>,
    delta_p_base: Option<f64>,
    delta_p_decay: Option<f64>,
    normalize: Option<bool>,
    trace: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    model: Option<String>,
    loss_rate: Option<f64>,
    preset: Option<String>,
    ber_good: Option<f64>,
    ber_bad: Option<f64>,
    loss_good: Option<f64>,
    loss_bad: Option<f64>,
    sojourn_good_ms: Option<f64>,
    sojourn_bad_ms: Option<f64>,
    oracle_state: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgorithmSection {
    name: Option<String>,
    ncvd_depth: Option<toml::Value>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_depth(v: &toml::Value) -> Result<Depth> {
    match v {
        toml::Value::Integer(n) => usize::try_from(*n)
            .ok()
            .and_then(Depth::limited)
            .ok_or_else(|| Error::Config(format!("ncvd_depth must be a positive integer, got {n}"))),
        toml::Value::String(s) => s.parse().map_err(Error::Config),
        other => Err(Error::Config(format!(
            "ncvd_depth must be an integer or \"unbounded\", got {other}"
        ))),
    }
}

fn channel_config(section: ChannelSection, packet_size: u32) -> Result<ChannelConfig> {
    let model = section.model.as_deref().map(str::to_ascii_lowercase);
    let wants_ge = match model.as_deref() {
        None => section.preset.is_some() || section.ber_good.is_some() || section.loss_good.is_some(),
        Some("iid" | "model1" | "i") => false,
        Some("gilbert-elliot" | "gilbert-elliott" | "ge" | "model2" | "ii") => true,
        Some(other) => return Err(Error::Config(format!("unknown channel model `{other}`"))),
    };
    if !wants_ge {
        if section.preset.is_some() || section.ber_good.is_some() || section.ber_bad.is_some() {
            return Err(Error::Config("Gilbert-Elliot keys given for an i.i.d. channel".into()));
        }
        let mut ch = ChannelConfig::default();
        if let (ChannelConfig::Iid { loss_rate }, Some(v)) = (&mut ch, section.loss_rate) {
            *loss_rate = v;
        }
        return Ok(ch);
    }
    if section.loss_rate.is_some() {
        return Err(Error::Config("loss_rate applies to the i.i.d. channel only".into()));
    }
    let preset = match &section.preset {
        Some(p) => p.parse::<SnrPreset>().map_err(Error::Config)?,
        None => SnrPreset::Snr7,
    };
    let mut ch = ChannelConfig::preset(preset);
    if let ChannelConfig::GilbertElliot {
        ber_good,
        ber_bad,
        sojourn_good,
        sojourn_bad,
        preset: label,
        oracle_state,
    } = &mut ch
    {
        let explicit = section.ber_good.is_some()
            || section.ber_bad.is_some()
            || section.loss_good.is_some()
            || section.loss_bad.is_some();
        if explicit && section.preset.is_some() {
            return Err(Error::Config(
                "give either a preset or explicit error rates, not both".into(),
            ));
        }
        if explicit {
            *label = None;
        }
        let from_loss = |l: f64| {
            if (0.0..1.0).contains(&l) {
                Ok(ber_from_packet_loss(l, packet_size))
            } else {
                Err(Error::Config(format!("per-state loss must be in [0, 1), got {l}")))
            }
        };
        match (section.ber_good, section.loss_good) {
            (Some(_), Some(_)) => return Err(Error::Config("give ber_good or loss_good, not both".into())),
            (Some(b), None) => *ber_good = b,
            (None, Some(l)) => *ber_good = from_loss(l)?,
            (None, None) => {}
        }
        match (section.ber_bad, section.loss_bad) {
            (Some(_), Some(_)) => return Err(Error::Config("give ber_bad or loss_bad, not both".into())),
            (Some(b), None) => *ber_bad = b,
            (None, Some(l)) => *ber_bad = from_loss(l)?,
            (None, None) => {}
        }
        set(sojourn_good, section.sojourn_good_ms);
        set(sojourn_bad, section.sojourn_bad_ms);
        set(oracle_state, section.oracle_state);
    }
    Ok(ch)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text)?;
    let mut cfg = RunConfig::default();

    let r = file.run;
    set(&mut cfg.duration, r.duration_ms);
    set(&mut cfg.seed, r.seed);
    set(&mut cfg.num_clients, r.num_clients);
    set(&mut cfg.link_rate, r.link_rate_bps);
    set(&mut cfg.delay_mean, r.delay_mean_ms);
    set(&mut cfg.ack_loss, r.ack_loss);
    set(&mut cfg.stagger_flows, r.stagger_flows);
    cfg.rtt = r.rtt_ms.or(cfg.rtt);

    let t = file.traffic;
    set(&mut cfg.traffic.rate, t.rate_bps);
    set(&mut cfg.traffic.fps, t.fps);
    set(&mut cfg.traffic.gop, t.gop);
    set(&mut cfg.traffic.packet_size, t.packet_size);
    set(&mut cfg.delay_budget, t.delay_budget_ms);
    cfg.traffic.delay_budget = cfg.delay_budget;
    set(&mut cfg.traffic.delta_i, t.delta_i);
    set(&mut cfg.traffic.delta_p_base, t.delta_p_base);
    set(&mut cfg.traffic.delta_p_decay, t.delta_p_decay);
    set(&mut cfg.normalize_deltas, t.normalize);
    cfg.trace = t.trace;

    cfg.channel = channel_config(file.channel, cfg.traffic.packet_size)?;

    let a = file.algorithm;
    if let Some(name) = a.name {
        cfg.algorithm = name.parse().map_err(Error::Config)?;
    }
    if let Some(d) = a.ncvd_depth {
        cfg.ncvd_depth = parse_depth(&d)?;
    }
    if cfg.traffic.packet_size == 0 {
        return Err(Error::Config("packet_size must be positive".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file. A relative trace path is resolved against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let (Some(trace), Some(dir)) = (&cfg.trace, path.parent()) {
        if trace.is_relative() {
            cfg.trace = Some(dir.join(trace));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Algorithm;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse_config(
            r#"
            [run]
            seed = 9
            duration_ms = 1000
            [traffic]
            delay_budget_ms = 150
            [algorithm]
            name = "ncvd"
            ncvd_depth = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.duration, 1000.0);
        assert_eq!(cfg.delay_budget, 150.0);
        assert_eq!(cfg.traffic.delay_budget, 150.0);
        assert_eq!(cfg.algorithm, Algorithm::Ncvd);
        assert_eq!(cfg.ncvd_depth, Depth::limited(3).unwrap());
    }

    #[test]
    fn gilbert_elliot_preset() {
        let cfg = parse_config("[channel]\nmodel = \"gilbert-elliot\"\npreset = \"snr5\"\n").unwrap();
        match cfg.channel {
            ChannelConfig::GilbertElliot {
                preset, sojourn_good, ..
            } => {
                assert_eq!(preset, Some(SnrPreset::Snr5));
                assert_eq!(sojourn_good, 21.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_state_loss_keys() {
        let cfg = parse_config("[channel]\nmodel = \"ge\"\nloss_good = 0.02\nloss_bad = 0.3\n").unwrap();
        let avg = cfg.channel.loss_param(cfg.traffic.packet_size);
        assert!((avg - 0.16).abs() < 1e-9, "{avg}");
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[run]\nbogus = 1\n",
            "[nope]\n",
            "[algorithm]\nname = \"fastest\"\n",
            "[algorithm]\nncvd_depth = 0\n",
            "[channel]\nloss_rate = 1.5\n",
            "[channel]\nmodel = \"ge\"\nloss_rate = 0.1\n",
            "[channel]\npreset = \"snr5\"\nber_good = 0.001\n",
            "[run]\nnum_clients = 0\n",
            "[traffic]\npacket_size = 0\n",
            "[run]\nduration_ms = -1\n",
            "not toml at all [",
        ] {
            assert!(parse_config(text).is_err(), "accepted {text:?}");
        }
    }
}
