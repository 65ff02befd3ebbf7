//! Simulator for video-aware opportunistic XOR network coding on a
//! wireless downlink.
//!
//! A base station broadcasts to a few clients over a lossy channel. Clients
//! overhear packets meant for others; the sender XORs queued packets into
//! codes chosen by one of several policies and tracks, per video packet,
//! whether it reached its client before the playout deadline.
//!
//! ```
//! use xorcast::{run, Algorithm, RunConfig};
//!
//! let config = RunConfig { algorithm: Algorithm::Ncv, duration: 1_000.0, ..RunConfig::default() };
//! let metrics = run(&config).unwrap();
//! assert!(metrics.check_invariants().is_ok());
//! ```

pub mod channel;
pub mod coding;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod sweep;
pub mod traffic;

pub use coding::{Depth, LossEstimate};
pub use error::{Error, Result};
pub use metrics::{RunMetrics, RunRecord};
pub use model::{NetworkCode, NodeState, Packet, PacketId, PacketState, TxQueue};
pub use sim::{run, Algorithm, ChannelConfig, RunConfig, Simulation};
