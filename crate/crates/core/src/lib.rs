//! Flow-level network anomaly detection.
//!
//! Flow records are binned in time and reduced to four metrics per bin:
//! total bytes, total packets, the largest cluster of similar-volume flows
//! aimed at one destination socket (`dsocket`) and the largest number of
//! distinct destination ports reached by similar-volume flows between one
//! address pair (`dport`). Each metric is tracked by an additive
//! Holt-Winters forecaster with a deviation band; observations outside the
//! band are flagged HIGH or LOW, and the combination of the four flags names
//! the anomaly (flooding, TCP SYN flood, portscan).

pub mod flow;
pub mod wire;
pub mod metrics;
pub mod forecast;
pub mod classify;
pub mod sim;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod store;
