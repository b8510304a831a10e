//! Run configuration: binning, the four per-metric forecaster settings and
//! episode handling. Loaded from TOML.
//!
//! ```toml
//! bin_width_secs = 60
//! bootstrap_bins = 96
//!
//! [forecast]            # shared by all four monitors
//! period = 48
//! delta = 2.5
//!
//! [forecast.dport]      # per-metric overrides
//! delta = 3.0
//! ```

use std::net::SocketAddr;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::flow::BinSpec;
use crate::forecast::{ForecastError, HwParams, SeasonalAdjust};
use crate::metrics::{Metric, VolumeBucketing};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {metric}: {source}")]
    Forecast {
        metric: Metric,
        source: ForecastError,
    },
}

/// Where flows come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    Listen(SocketAddr),
    FlowLog(PathBuf),
    Scenario(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bins: BinSpec,
    /// Forecaster settings indexed by `Metric::index`.
    pub monitors: [HwParams; 4],
    pub bucketing: VolumeBucketing,
    pub bootstrap_bins: usize,
    pub episode_gap: u32,
    /// How long after a bin ends, in record time, it stays open for late flows.
    pub lateness_secs: u64,
    pub input: Option<InputSource>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hw = HwParams::default();
        RunConfig {
            bins: BinSpec::default(),
            monitors: [hw; 4],
            bucketing: VolumeBucketing::default(),
            bootstrap_bins: 2 * hw.period,
            episode_gap: 1,
            lateness_secs: 2,
            input: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn params(&self, metric: Metric) -> &HwParams {
        &self.monitors[metric.index()]
    }

    pub fn params_mut(&mut self, metric: Metric) -> &mut HwParams {
        &mut self.monitors[metric.index()]
    }

    /// Sets the same period on all monitors and a two-period bootstrap.
    pub fn set_period(&mut self, period: usize) {
        for p in &mut self.monitors {
            p.period = period;
        }
        self.bootstrap_bins = 2 * period;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for metric in Metric::ALL {
            let p = self.params(metric);
            p.validate()
                .map_err(|source| ConfigError::Forecast { metric, source })?;
            if self.bootstrap_bins < 2 * p.period {
                return Err(ConfigError::Invalid(format!(
                    "bootstrap_bins {} is shorter than two {metric} periods ({})",
                    self.bootstrap_bins,
                    2 * p.period
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        file.resolve()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    bin_width_secs: Option<u64>,
    bin_origin_secs: Option<i64>,
    bootstrap_bins: Option<usize>,
    episode_gap: Option<u32>,
    lateness_secs: Option<u64>,
    bucketing_radius: Option<u32>,
    listen: Option<SocketAddr>,
    flow_log: Option<PathBuf>,
    scenario: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    forecast: ForecastSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForecastSection {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    gamma_dev: Option<f64>,
    delta: Option<f64>,
    period: Option<usize>,
    floor_ratio: Option<f64>,
    seasonal: Option<String>,
    freeze_on_anomaly: Option<bool>,
    total_bytes: Option<Overrides>,
    total_packets: Option<Overrides>,
    dsocket: Option<Overrides>,
    dport: Option<Overrides>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    gamma_dev: Option<f64>,
    delta: Option<f64>,
    period: Option<usize>,
    floor_ratio: Option<f64>,
    seasonal: Option<String>,
    freeze_on_anomaly: Option<bool>,
}

impl Overrides {
    fn apply(&self, p: &mut HwParams) -> Result<(), ConfigError> {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.gamma, self.gamma);
        set(&mut p.gamma_dev, self.gamma_dev);
        set(&mut p.delta, self.delta);
        set(&mut p.floor_ratio, self.floor_ratio);
        if let Some(period) = self.period {
            p.period = period;
        }
        if let Some(s) = &self.seasonal {
            p.seasonal = s.parse::<SeasonalAdjust>().map_err(ConfigError::Invalid)?;
        }
        if let Some(f) = self.freeze_on_anomaly {
            p.freeze_on_anomaly = f;
        }
        Ok(())
    }
}

impl ConfigFile {
    fn resolve(self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let f = &self.forecast;
        let shared = Overrides {
            alpha: f.alpha,
            beta: f.beta,
            gamma: f.gamma,
            gamma_dev: f.gamma_dev,
            delta: f.delta,
            period: f.period,
            floor_ratio: f.floor_ratio,
            seasonal: f.seasonal.clone(),
            freeze_on_anomaly: f.freeze_on_anomaly,
        };
        let per_metric = [&f.total_bytes, &f.total_packets, &f.dsocket, &f.dport];
        for (params, own) in cfg.monitors.iter_mut().zip(per_metric) {
            shared.apply(params)?;
            if let Some(own) = own {
                own.apply(params)?;
            }
        }
        let longest = cfg.monitors.iter().map(|p| p.period).max().unwrap_or(1);
        cfg.bootstrap_bins = self.bootstrap_bins.unwrap_or(2 * longest);
        cfg.bins = BinSpec::new(
            self.bin_width_secs.unwrap_or(cfg.bins.width_secs()),
            self.bin_origin_secs.unwrap_or(cfg.bins.origin_secs()),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(g) = self.episode_gap {
            cfg.episode_gap = g;
        }
        if let Some(l) = self.lateness_secs {
            cfg.lateness_secs = l;
        }
        if let Some(r) = self.bucketing_radius {
            cfg.bucketing = VolumeBucketing::new(r);
        }
        let sources: Vec<InputSource> = [
            self.listen.map(InputSource::Listen),
            self.flow_log.map(InputSource::FlowLog),
            self.scenario.map(InputSource::Scenario),
        ]
        .into_iter()
        .flatten()
        .collect();
        if sources.len() > 1 {
            return Err(ConfigError::Invalid(
                "at most one of listen, flow_log and scenario may be set".into(),
            ));
        }
        cfg.input = sources.into_iter().next();
        cfg.out_dir = self.out_dir;
        cfg.validate()?;
        Ok(cfg)
    }
}
