//! Additive Holt-Winters forecasting with a seasonal deviation band.
//!
//! For each observation `y` at seasonal phase `p`:
//!
//! ```text
//! forecast   ŷ  = a + b + c[p]
//! band          = ŷ ± δ·d[p]               (checked before any update)
//! baseline   a' = α(y − c[p]) + (1 − α)(a + b)
//! slope      b' = β(a' − a) + (1 − β)b
//! seasonal   c[p] = γ(y − a') + (1 − γ)c[p]
//! deviation  d[p] = γ_d|y − ŷ| + (1 − γ_d)d[p]
//! ```
//!
//! `c` and `d` are rings of one seasonal period, so `c[p]` and `d[p]` read
//! the values written one period earlier.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForecastError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("bootstrap needs at least {needed} observations, got {got}")]
    BootstrapTooShort { needed: usize, got: usize },
    #[error("non-finite observation at index {index}")]
    NonFinite { index: usize },
    #[error("series of {len} points leaves nothing after a {bootstrap}-point bootstrap")]
    SeriesTooShort { len: usize, bootstrap: usize },
}

/// HIGH/LOW/NORMAL verdict of one observation against its band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Flag {
    Low,
    #[default]
    Normal,
    High,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::Low => "LOW",
            Flag::Normal => "NORMAL",
            Flag::High => "HIGH",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LOW" => Ok(Flag::Low),
            "NORMAL" => Ok(Flag::Normal),
            "HIGH" => Ok(Flag::High),
            other => Err(format!("unknown flag `{other}`")),
        }
    }
}

/// How the seasonal term enters the baseline update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeasonalAdjust {
    /// `a' = α(y − c) + …`, the classical deseasonalised observation.
    #[default]
    Subtract,
    /// `a' = α(y + c) + …`, the sign as it is sometimes printed.
    AsPrinted,
}

impl SeasonalAdjust {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeasonalAdjust::Subtract => "subtract",
            SeasonalAdjust::AsPrinted => "as-printed",
        }
    }
}

impl FromStr for SeasonalAdjust {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subtract" => Ok(SeasonalAdjust::Subtract),
            "as-printed" => Ok(SeasonalAdjust::AsPrinted),
            other => Err(format!("unknown seasonal mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_dev: f64,
    pub delta: f64,
    pub period: usize,
    /// Deviation floor as a fraction of the bootstrap mean (absolute when
    /// the mean is 0).
    pub floor_ratio: f64,
    pub seasonal: SeasonalAdjust,
    /// Skip coefficient updates on flagged observations.
    pub freeze_on_anomaly: bool,
}

impl Default for HwParams {
    fn default() -> Self {
        HwParams {
            alpha: 0.1,
            beta: 0.01,
            gamma: 0.1,
            gamma_dev: 0.1,
            delta: 2.5,
            period: 1440,
            floor_ratio: 1e-6,
            seasonal: SeasonalAdjust::Subtract,
            freeze_on_anomaly: false,
        }
    }
}

impl HwParams {
    pub fn with_period(period: usize) -> Self {
        HwParams {
            period,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("gamma_dev", self.gamma_dev),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ForecastError::InvalidParams(format!(
                    "{name} = {v} must lie strictly between 0 and 1"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(ForecastError::InvalidParams(format!(
                "delta = {} must be positive",
                self.delta
            )));
        }
        if !(self.floor_ratio > 0.0 && self.floor_ratio.is_finite()) {
            return Err(ForecastError::InvalidParams(format!(
                "floor_ratio = {} must be positive",
                self.floor_ratio
            )));
        }
        if self.period < 2 {
            return Err(ForecastError::InvalidParams(format!(
                "period = {} must be at least 2",
                self.period
            )));
        }
        Ok(())
    }
}

/// Coefficients of one metric's forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct HwState {
    pub baseline: f64,
    pub slope: f64,
    pub seasonal: Vec<f64>,
    pub deviation: Vec<f64>,
    /// Index of the last observation folded into the state; -1 before any.
    pub t: i64,
    /// Lower bound for every deviation entry.
    pub floor: f64,
}

/// Outcome of checking one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub forecast: f64,
    pub lo: f64,
    pub hi: f64,
    pub flag: Flag,
}

/// Closed-form starting coefficients from the first two seasons: baseline is
/// the first season's mean, slope the per-bin change between the two season
/// means, and each seasonal entry the average offset of that phase from its
/// season mean.
pub fn initial_components(bootstrap: &[f64], period: usize) -> (f64, f64, Vec<f64>) {
    let m = period;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&bootstrap[..m]);
    let second = mean(&bootstrap[m..2 * m]);
    let slope = (second - first) / m as f64;
    let seasonal = (0..m)
        .map(|i| ((bootstrap[i] - first) + (bootstrap[m + i] - second)) / 2.0)
        .collect();
    (first, slope, seasonal)
}

impl HwState {
    /// Builds a state from a clean bootstrap series: closed-form starting
    /// coefficients, then a replay of the whole bootstrap through the update
    /// rule. Each deviation entry becomes the mean absolute one-step residual
    /// seen at its phase during the replay, floored at `floor_ratio × |mean|`.
    pub fn init(bootstrap: &[f64], params: &HwParams) -> Result<Self, ForecastError> {
        params.validate()?;
        let m = params.period;
        if bootstrap.len() < 2 * m {
            return Err(ForecastError::BootstrapTooShort {
                needed: 2 * m,
                got: bootstrap.len(),
            });
        }
        if let Some(index) = bootstrap.iter().position(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite { index });
        }
        let mean = bootstrap.iter().sum::<f64>() / bootstrap.len() as f64;
        let floor = if mean == 0.0 {
            params.floor_ratio
        } else {
            params.floor_ratio * mean.abs()
        };
        let (baseline, slope, seasonal) = initial_components(bootstrap, m);
        let mut state = HwState {
            baseline,
            slope,
            seasonal,
            deviation: vec![floor; m],
            t: -1,
            floor,
        };

        let mut residual_sum = vec![0.0; m];
        let mut residual_n = vec![0usize; m];
        let replay = HwParams {
            freeze_on_anomaly: false,
            ..*params
        };
        for &y in bootstrap {
            let p = state.next_phase();
            let step = state.apply(y, &replay);
            residual_sum[p] += (y - step.forecast).abs();
            residual_n[p] += 1;
        }
        for p in 0..m {
            state.deviation[p] = (residual_sum[p] / residual_n[p] as f64).max(floor);
        }
        Ok(state)
    }

    pub fn period(&self) -> usize {
        self.seasonal.len()
    }

    fn next_phase(&self) -> usize {
        (self.t + 1).rem_euclid(self.period() as i64) as usize
    }

    /// One-step-ahead forecast `a + b + c[next phase]`.
    pub fn predict(&self) -> f64 {
        self.baseline + self.slope + self.seasonal[self.next_phase()]
    }

    /// Checks `y` against the band, then folds it into the coefficients.
    pub fn update(&mut self, y: f64, params: &HwParams) -> Result<Step, ForecastError> {
        if !y.is_finite() {
            return Err(ForecastError::NonFinite {
                index: (self.t + 1).max(0) as usize,
            });
        }
        Ok(self.apply(y, params))
    }

    fn apply(&mut self, y: f64, params: &HwParams) -> Step {
        let p = self.next_phase();
        let forecast = self.baseline + self.slope + self.seasonal[p];
        let width = params.delta * self.deviation[p];
        let (lo, hi) = (forecast - width, forecast + width);
        let flag = if y > hi {
            Flag::High
        } else if y < lo {
            Flag::Low
        } else {
            Flag::Normal
        };
        let step = Step {
            forecast,
            lo,
            hi,
            flag,
        };
        self.t += 1;
        if params.freeze_on_anomaly && flag != Flag::Normal {
            return step;
        }

        let deseasonalised = match params.seasonal {
            SeasonalAdjust::Subtract => y - self.seasonal[p],
            SeasonalAdjust::AsPrinted => y + self.seasonal[p],
        };
        let prev = self.baseline;
        self.baseline =
            params.alpha * deseasonalised + (1.0 - params.alpha) * (prev + self.slope);
        self.slope = params.beta * (self.baseline - prev) + (1.0 - params.beta) * self.slope;
        self.seasonal[p] =
            params.gamma * (y - self.baseline) + (1.0 - params.gamma) * self.seasonal[p];
        self.deviation[p] = (params.gamma_dev * (y - forecast).abs()
            + (1.0 - params.gamma_dev) * self.deviation[p])
            .max(self.floor);
        step
    }
}

/// Initialises on the first `bootstrap_len` points and checks every later
/// point in order. Returns one step per post-bootstrap observation.
pub fn run_series(
    series: &[f64],
    params: &HwParams,
    bootstrap_len: usize,
) -> Result<Vec<Step>, ForecastError> {
    if series.len() <= bootstrap_len {
        return Err(ForecastError::SeriesTooShort {
            len: series.len(),
            bootstrap: bootstrap_len,
        });
    }
    let mut state = HwState::init(&series[..bootstrap_len], params)?;
    series[bootstrap_len..]
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            state.update(y, params).map_err(|e| match e {
                ForecastError::NonFinite { .. } => ForecastError::NonFinite {
                    index: bootstrap_len + i,
                },
                other => other,
            })
        })
        .collect()
}
