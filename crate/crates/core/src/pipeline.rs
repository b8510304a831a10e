//! Binning, per-bin metrics, the four monitors and episode building.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::classify::{AnomalyEvent, EpisodeMerger, FlagVector};
use crate::config::RunConfig;
use crate::flow::{BinSpec, FlowRecord};
use crate::forecast::{Flag, ForecastError, HwState, Step};
use crate::metrics::{metric_vector, Metric, MetricVector, VolumeBucketing};
use crate::store::{self, MonitorSnapshot, StoreError};

/// Groups flows into bins by `last_time` and releases bins in order once the
/// newest record time has passed their end by the lateness allowance. Empty
/// bins between populated ones are released too.
#[derive(Debug, Clone)]
pub struct Binner {
    spec: BinSpec,
    lateness_ms: u64,
    open: BTreeMap<i64, Vec<FlowRecord>>,
    next: Option<i64>,
    watermark: u64,
    dropped: u64,
}

impl Binner {
    pub fn new(spec: BinSpec, lateness_secs: u64) -> Self {
        Binner {
            spec,
            lateness_ms: lateness_secs * 1000,
            open: BTreeMap::new(),
            next: None,
            watermark: 0,
            dropped: 0,
        }
    }

    /// Flows that arrived after their bin was released.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn push(&mut self, flow: FlowRecord) -> Vec<(i64, Vec<FlowRecord>)> {
        let bin = self.spec.bin_index(flow.last_time);
        if self.next.is_some_and(|n| bin < n) {
            self.dropped += 1;
            log::warn!("late flow for closed bin {bin} dropped");
            return Vec::new();
        }
        self.next.get_or_insert(bin);
        self.watermark = self.watermark.max(flow.last_time);
        self.open.entry(bin).or_default().push(flow);
        self.release(false)
    }

    /// Releases everything still held.
    pub fn finish(&mut self) -> Vec<(i64, Vec<FlowRecord>)> {
        self.release(true)
    }

    fn release(&mut self, all: bool) -> Vec<(i64, Vec<FlowRecord>)> {
        let mut out = Vec::new();
        let Some(mut next) = self.next else {
            return out;
        };
        let last_open = self.open.keys().next_back().copied();
        loop {
            let end = self.spec.bin_start_ms(next + 1);
            let closed = if all {
                last_open.is_some_and(|l| next <= l)
            } else {
                (end as i128) + (self.lateness_ms as i128) <= self.watermark as i128
            };
            if !closed {
                break;
            }
            out.push((next, self.open.remove(&next).unwrap_or_default()));
            next += 1;
        }
        self.next = Some(next);
        out
    }
}

/// Result of feeding one bin to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct BinOutcome {
    pub metrics: MetricVector,
    /// `None` while the bin is part of the bootstrap.
    pub steps: Option<[Step; 4]>,
    /// Episodes that can no longer grow.
    pub closed: Vec<AnomalyEvent>,
}

impl BinOutcome {
    pub fn flags(&self) -> Option<FlagVector> {
        self.steps.map(|s| {
            FlagVector::new(self.metrics.bin, [s[0].flag, s[1].flag, s[2].flag, s[3].flag])
        })
    }
}

/// The four monitors plus episode merging, fed one consecutive bin at a time.
#[derive(Debug, Clone)]
pub struct Detector {
    config: RunConfig,
    bootstrap: Vec<MetricVector>,
    states: Option<Vec<HwState>>,
    merger: EpisodeMerger,
    last_bin: Option<i64>,
}

impl Detector {
    pub fn new(config: RunConfig) -> Self {
        let merger = EpisodeMerger::new(config.episode_gap);
        Detector {
            config,
            bootstrap: Vec::new(),
            states: None,
            merger,
            last_bin: None,
        }
    }

    pub fn bucketing(&self) -> VolumeBucketing {
        self.config.bucketing
    }

    pub fn states(&self) -> Option<&[HwState]> {
        self.states.as_deref()
    }

    /// Computes the metrics of one bin and runs them through the monitors.
    pub fn push_flows(&mut self, bin: i64, flows: &[FlowRecord]) -> Result<BinOutcome, ForecastError> {
        let mv = metric_vector(bin, flows, &self.config.bucketing);
        self.push_metrics(mv)
    }

    pub fn push_metrics(&mut self, mv: MetricVector) -> Result<BinOutcome, ForecastError> {
        if let Some(prev) = self.last_bin {
            assert_eq!(mv.bin, prev + 1, "bins must be consecutive");
        }
        self.last_bin = Some(mv.bin);
        let Some(states) = self.states.as_mut() else {
            self.bootstrap.push(mv);
            if self.bootstrap.len() == self.config.bootstrap_bins {
                let states = Metric::ALL
                    .iter()
                    .map(|&m| {
                        let series: Vec<f64> =
                            self.bootstrap.iter().map(|v| v.get(m) as f64).collect();
                        HwState::init(&series, self.config.params(m))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                self.states = Some(states);
                self.bootstrap.clear();
            }
            return Ok(BinOutcome {
                metrics: mv,
                steps: None,
                closed: Vec::new(),
            });
        };
        let mut steps = [Step {
            forecast: 0.0,
            lo: 0.0,
            hi: 0.0,
            flag: Flag::Normal,
        }; 4];
        for (i, &m) in Metric::ALL.iter().enumerate() {
            steps[i] = states[i].update(mv.get(m) as f64, self.config.params(m))?;
        }
        let mut outcome = BinOutcome {
            metrics: mv,
            steps: Some(steps),
            closed: Vec::new(),
        };
        let flags = outcome.flags().expect("steps present");
        outcome.closed.extend(self.merger.advance_to(mv.bin));
        if let Some(event) = AnomalyEvent::from_flags(flags) {
            outcome.closed.extend(self.merger.push(event));
        }
        Ok(outcome)
    }

    /// Closes the open episode, if any.
    pub fn finish(&mut self) -> Option<AnomalyEvent> {
        self.merger.finish()
    }
}

/// Everything a batch run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub series: Vec<MetricVector>,
    pub steps: Vec<Option<[Step; 4]>>,
    pub episodes: Vec<AnomalyEvent>,
    pub states: Option<Vec<HwState>>,
    pub dropped: u64,
}

/// Runs flows, in the given order, through a binner and a detector.
pub fn detect(flows: impl IntoIterator<Item = FlowRecord>, config: &RunConfig) -> Result<RunOutput, ForecastError> {
    let mut binner = Binner::new(config.bins, config.lateness_secs);
    let mut detector = Detector::new(config.clone());
    let mut out = RunOutput {
        series: Vec::new(),
        steps: Vec::new(),
        episodes: Vec::new(),
        states: None,
        dropped: 0,
    };
    let mut feed = |bins: Vec<(i64, Vec<FlowRecord>)>, out: &mut RunOutput| -> Result<(), ForecastError> {
        for (bin, flows) in bins {
            let o = detector.push_flows(bin, &flows)?;
            out.series.push(o.metrics);
            out.steps.push(o.steps);
            out.episodes.extend(o.closed);
        }
        Ok(())
    };
    for f in flows {
        let released = binner.push(f);
        feed(released, &mut out)?;
    }
    let rest = binner.finish();
    feed(rest, &mut out)?;
    out.episodes.extend(detector.finish());
    out.states = detector.states().map(|s| s.to_vec());
    out.dropped = binner.dropped();
    Ok(out)
}

impl RunOutput {
    /// Episodes that carry at least one label.
    pub fn anomalies(&self) -> usize {
        self.episodes.iter().filter(|e| !e.labels.is_empty()).count()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("forecaster: {0}")]
    Forecast(#[from] ForecastError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const SERIES_FILE: &str = "series.tsv";
pub const EVENTS_FILE: &str = "events.tsv";
pub const SNAPSHOT_FILE: &str = "hw.snapshot";
pub const FLOWS_FILE: &str = "flows.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";

pub fn snapshots(config: &RunConfig, states: &[HwState]) -> Vec<MonitorSnapshot> {
    Metric::ALL
        .iter()
        .zip(states)
        .map(|(&metric, state)| MonitorSnapshot {
            metric,
            params: *config.params(metric),
            state: state.clone(),
        })
        .collect()
}

/// Writes the metric series, the event log and, once bootstrapped, the
/// forecaster snapshot into `out_dir`.
pub fn write_outputs(out: &RunOutput, config: &RunConfig, out_dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    store::write_series(&out.series, &out_dir.join(SERIES_FILE))?;
    store::write_events(&out.episodes, &out_dir.join(EVENTS_FILE))?;
    if let Some(states) = &out.states {
        store::write_snapshot(&snapshots(config, states), &out_dir.join(SNAPSHOT_FILE))?;
    }
    Ok(())
}

/// Batch run over a flow log, in file order, with outputs in `out_dir`.
pub fn replay(flow_log: &Path, config: &RunConfig, out_dir: &Path) -> Result<RunOutput, RunError> {
    let flows = store::read_flow_log(flow_log)?;
    let out = detect(flows, config)?;
    if out.states.is_none() {
        log::warn!(
            "{} bins are fewer than the {}-bin bootstrap; nothing was checked",
            out.series.len(),
            config.bootstrap_bins
        );
    }
    write_outputs(&out, config, out_dir)?;
    Ok(out)
}
