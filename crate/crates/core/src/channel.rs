//! Loss and delay processes for the downlink and the ACK return path.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::model::Millis;

/// Model I: independent losses with a fixed probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidChannel {
    pub loss_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeState {
    Good,
    Bad,
}

/// Model II: two-state Markov channel.
///
/// The chain is stepped once per `step` milliseconds. Leaving a state happens
/// with probability `step / mean_sojourn` per step, so holding times are
/// geometric with the configured mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GilbertElliotChannel {
    pub ber_good: f64,
    pub ber_bad: f64,
    pub sojourn_good: Millis,
    pub sojourn_bad: Millis,
    pub step: Millis,
    pub current: GeState,
    /// Nominal average SNR this parameter set stands for, if from a preset.
    pub avg_snr_db: Option<u8>,
}

/// Packet loss probability for `packet_size` bytes at bit-error rate `ber`.
pub fn packet_loss_from_ber(ber: f64, packet_size: u32) -> f64 {
    1.0 - (1.0 - ber).powf(8.0 * packet_size as f64)
}

/// Bit-error rate giving packet loss `loss` for `packet_size` bytes.
pub fn ber_from_packet_loss(loss: f64, packet_size: u32) -> f64 {
    1.0 - (1.0 - loss).powf(1.0 / (8.0 * packet_size as f64))
}

/// Named Gilbert-Elliot parameter sets for average SNR 3, 5, 7 and 9 dB.
///
/// These are calibration points, not transcribed channel measurements: each
/// fixes the per-state packet loss at 250-byte packets so that the
/// stationary average loss (equal sojourns) spans roughly 35% down to 1%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnrPreset {
    Snr3,
    Snr5,
    Snr7,
    Snr9,
}

impl SnrPreset {
    pub const ALL: [SnrPreset; 4] = [SnrPreset::Snr3, SnrPreset::Snr5, SnrPreset::Snr7, SnrPreset::Snr9];

    pub fn db(self) -> u8 {
        match self {
            SnrPreset::Snr3 => 3,
            SnrPreset::Snr5 => 5,
            SnrPreset::Snr7 => 7,
            SnrPreset::Snr9 => 9,
        }
    }

    /// (good, bad) packet loss at 250-byte packets.
    pub fn packet_loss(self) -> (f64, f64) {
        match self {
            SnrPreset::Snr3 => (0.10, 0.60),
            SnrPreset::Snr5 => (0.04, 0.36),
            SnrPreset::Snr7 => (0.01, 0.15),
            SnrPreset::Snr9 => (0.001, 0.019),
        }
    }

    /// (good, bad) bit-error rates.
    pub fn ber(self) -> (f64, f64) {
        let (g, b) = self.packet_loss();
        (ber_from_packet_loss(g, 250), ber_from_packet_loss(b, 250))
    }
}

impl FromStr for SnrPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches("snr").trim_end_matches("db");
        match digits {
            "3" => Ok(SnrPreset::Snr3),
            "5" => Ok(SnrPreset::Snr5),
            "7" => Ok(SnrPreset::Snr7),
            "9" => Ok(SnrPreset::Snr9),
            _ => Err(format!("unknown SNR preset `{s}` (expected one of 3, 5, 7, 9)")),
        }
    }
}

impl fmt::Display for SnrPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "snr{}", self.db())
    }
}

impl GilbertElliotChannel {
    pub fn new(ber_good: f64, ber_bad: f64, sojourn_good: Millis, sojourn_bad: Millis, step: Millis) -> Self {
        GilbertElliotChannel {
            ber_good,
            ber_bad,
            sojourn_good,
            sojourn_bad,
            step,
            current: GeState::Good,
            avg_snr_db: None,
        }
    }

    pub fn from_preset(preset: SnrPreset, sojourn_good: Millis, sojourn_bad: Millis, step: Millis) -> Self {
        let (g, b) = preset.ber();
        GilbertElliotChannel {
            avg_snr_db: Some(preset.db()),
            ..Self::new(g, b, sojourn_good, sojourn_bad, step)
        }
    }

    pub fn stationary_good(&self) -> f64 {
        self.sojourn_good / (self.sojourn_good + self.sojourn_bad)
    }

    pub fn state_loss(&self, state: GeState, packet_size: u32) -> f64 {
        let ber = match state {
            GeState::Good => self.ber_good,
            GeState::Bad => self.ber_bad,
        };
        packet_loss_from_ber(ber, packet_size)
    }

    pub fn average_loss(&self, packet_size: u32) -> f64 {
        let pi = self.stationary_good();
        pi * self.state_loss(GeState::Good, packet_size) + (1.0 - pi) * self.state_loss(GeState::Bad, packet_size)
    }

    fn leave_probability(&self) -> f64 {
        let sojourn = match self.current {
            GeState::Good => self.sojourn_good,
            GeState::Bad => self.sojourn_bad,
        };
        (self.step / sojourn).clamp(0.0, 1.0)
    }

    /// Draws the initial state from the stationary distribution.
    pub fn randomize_state<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.current = if rng.random::<f64>() < self.stationary_good() {
            GeState::Good
        } else {
            GeState::Bad
        };
    }

    /// Runs one Markov step. Always consumes exactly one uniform draw.
    pub fn step_once<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let u: f64 = rng.random();
        if u < self.leave_probability() {
            self.current = match self.current {
                GeState::Good => GeState::Bad,
                GeState::Bad => GeState::Good,
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Iid(IidChannel),
    GilbertElliot(GilbertElliotChannel),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Delivered { delay: Millis },
    Lost,
}

impl Outcome {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Outcome::Delivered { .. })
    }
}

/// Exponential one-way delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    pub mean: Millis,
}

impl DelayModel {
    pub fn new(mean: Millis) -> Self {
        assert!(mean > 0.0, "delay mean must be positive");
        DelayModel { mean }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Millis {
        Exp::new(1.0 / self.mean).expect("positive rate").sample(rng)
    }
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { mean: 4.0 }
    }
}

impl Channel {
    /// Moves the channel forward by `elapsed` ms.
    ///
    /// Model I is memoryless. Model II takes `round(elapsed / step)` Markov
    /// steps; the state at the start of a packet governs the whole packet.
    pub fn advance<R: Rng + ?Sized>(&mut self, elapsed: Millis, rng: &mut R) {
        if let Channel::GilbertElliot(ge) = self {
            let steps = (elapsed / ge.step).round() as u64;
            for _ in 0..steps {
                ge.step_once(rng);
            }
        }
    }

    /// Packet loss probability in the current state.
    pub fn current_loss(&self, packet_size: u32) -> f64 {
        match self {
            Channel::Iid(c) => c.loss_rate,
            Channel::GilbertElliot(ge) => ge.state_loss(ge.current, packet_size),
        }
    }

    /// Long-run packet loss rate.
    pub fn average_loss(&self, packet_size: u32) -> f64 {
        match self {
            Channel::Iid(c) => c.loss_rate,
            Channel::GilbertElliot(ge) => ge.average_loss(packet_size),
        }
    }

    /// Samples one transmission. Always consumes one uniform and one delay
    /// draw so that outcome sequences stay aligned across policies.
    pub fn transmit_outcome<R: Rng + ?Sized>(&self, packet_size: u32, delay: &DelayModel, rng: &mut R) -> Outcome {
        let u: f64 = rng.random();
        let d = delay.sample(rng);
        if u < self.current_loss(packet_size) {
            Outcome::Lost
        } else {
            Outcome::Delivered { delay: d }
        }
    }
}

/// ACK return path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckModel {
    pub loss: f64,
    pub delay: DelayModel,
}

impl Default for AckModel {
    fn default() -> Self {
        AckModel {
            loss: 0.0,
            delay: DelayModel::default(),
        }
    }
}

impl AckModel {
    /// Consumes one uniform and one delay draw regardless of outcome.
    pub fn ack_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> Outcome {
        let u: f64 = rng.random();
        let d = self.delay.sample(rng);
        if u < self.loss {
            Outcome::Lost
        } else {
            Outcome::Delivered { delay: d }
        }
    }
}
