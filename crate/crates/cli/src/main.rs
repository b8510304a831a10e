use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flowguard::config::{InputSource, RunConfig};
use flowguard::flow::BinSpec;
use flowguard::forecast::HwParams;
use flowguard::metrics::Metric;
use flowguard::pipeline::{self, FLOWS_FILE, TRUTH_FILE};
use flowguard::report::summarize;
use flowguard::sim::Scenario;
use flowguard::store;

mod collect;

#[derive(Parser)]
#[command(name = "flowguard", version, about = "Flow-metric anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Receive NetFlow v9 / IPFIX datagrams, log flows and detect live.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Stop after this many datagrams.
        #[arg(long)]
        max_datagrams: Option<u64>,
        /// Stop after this many seconds without a datagram.
        #[arg(long, value_name = "SECONDS")]
        idle_timeout: Option<f64>,
    },
    /// Run detection over a flow log. Exits 0 when nothing was found, 1 on
    /// anomalies, 2 on error.
    Replay {
        flow_log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a labeled flow log from a scenario file.
    Simulate {
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize an event log, scored against ground truth when given.
    Report {
        events: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "SECONDS")]
    bin_width: Option<u64>,
    /// Seasonal period in bins; also sets a two-period bootstrap.
    #[arg(long, value_name = "BINS")]
    period: Option<usize>,
    #[arg(long, value_name = "[METRIC=]VALUE")]
    alpha: Vec<String>,
    #[arg(long, value_name = "[METRIC=]VALUE")]
    beta: Vec<String>,
    #[arg(long, value_name = "[METRIC=]VALUE")]
    gamma: Vec<String>,
    #[arg(long, value_name = "[METRIC=]VALUE")]
    delta: Vec<String>,
    #[arg(long, value_name = "BINS")]
    bootstrap: Option<usize>,
    #[arg(long, value_name = "ADDR:PORT")]
    listen: Option<std::net::SocketAddr>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(w) = self.bin_width {
            cfg.bins = BinSpec::new(w, cfg.bins.origin_secs())?;
        }
        if let Some(p) = self.period {
            cfg.set_period(p);
        }
        if let Some(b) = self.bootstrap {
            cfg.bootstrap_bins = b;
        }
        let setters: [(&str, &[String], fn(&mut HwParams, f64)); 4] = [
            ("alpha", &self.alpha, |p, v| p.alpha = v),
            ("beta", &self.beta, |p, v| p.beta = v),
            ("gamma", &self.gamma, |p, v| p.gamma = v),
            ("delta", &self.delta, |p, v| p.delta = v),
        ];
        for (name, values, set) in setters {
            for raw in values {
                let (metrics, value) = parse_override(raw).with_context(|| format!("--{name} {raw}"))?;
                for m in metrics {
                    set(cfg.params_mut(m), value);
                }
            }
        }
        if let Some(addr) = self.listen {
            cfg.input = Some(InputSource::Listen(addr));
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `VALUE` applies to all four metrics, `METRIC=VALUE` to one.
fn parse_override(raw: &str) -> Result<(Vec<Metric>, f64)> {
    let (metrics, value) = match raw.split_once('=') {
        Some((m, v)) => (vec![m.parse::<Metric>().map_err(anyhow::Error::msg)?], v),
        None => (Metric::ALL.to_vec(), raw),
    };
    Ok((metrics, value.parse().context("not a number")?))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn input_path(arg: &Option<PathBuf>, cfg: &RunConfig, want: fn(&InputSource) -> Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    match (arg, cfg.input.as_ref().and_then(want)) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => bail!("no {what} given"),
    }
}

fn replay(flow_log: &Option<PathBuf>, common: &Common) -> Result<bool> {
    let cfg = common.load()?;
    let path = input_path(flow_log, &cfg, |s| match s {
        InputSource::FlowLog(p) => Some(p),
        _ => None,
    }, "flow log")?;
    let out = pipeline::replay(&path, &cfg, &out_dir(&cfg))?;
    for e in &out.episodes {
        println!("{}", store::format_event(e));
    }
    Ok(out.anomalies() > 0)
}

fn simulate(scenario: &Option<PathBuf>, common: &Common) -> Result<()> {
    let cfg = if common.config.is_some() { common.load()? } else {
        RunConfig { out_dir: common.out.clone(), ..Default::default() }
    };
    let path = input_path(scenario, &cfg, |s| match s {
        InputSource::Scenario(p) => Some(p),
        _ => None,
    }, "scenario file")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = Scenario::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(seed) = common.seed {
        sc.baseline.seed = seed;
    }
    let (stream, truth) = sc.run()?;
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    store::write_flow_log(&stream.flows, &dir.join(FLOWS_FILE), false)?;
    store::write_ground_truth(&truth, &dir.join(TRUTH_FILE))?;
    println!("{} flows over {} bins, {} attacks", stream.flows.len(), stream.n_bins, truth.len());
    Ok(())
}

fn report(events: &Path, truth: Option<&Path>) -> Result<()> {
    let episodes = store::read_events(events)?;
    let truth = truth.map(store::read_ground_truth).transpose()?;
    print!("{}", summarize(&episodes, truth.as_ref()));
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Collect { common, max_datagrams, idle_timeout } => {
            let cfg = common.load()?;
            let Some(InputSource::Listen(addr)) = cfg.input.clone() else {
                bail!("collect needs --listen ADDR:PORT or `listen` in the config");
            };
            let limits = collect::Limits {
                max_datagrams: *max_datagrams,
                idle_timeout: idle_timeout.map(std::time::Duration::from_secs_f64),
            };
            collect::run(addr, &cfg, &out_dir(&cfg), limits)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { flow_log, common } => Ok(if replay(flow_log, common)? {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        }),
        Command::Simulate { scenario, common } => simulate(scenario, common).map(|_| ExitCode::SUCCESS),
        Command::Report { events, truth } => report(events, truth.as_deref()).map(|_| ExitCode::SUCCESS),
    }
}

/// The error chain on one line. Library errors already embed their source in
/// their message, so causes already shown are skipped.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
