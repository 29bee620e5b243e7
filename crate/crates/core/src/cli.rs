//! Command-line front end.
//!
//! `msgn <command> --config FILE [--seed S] [--out DIR] [--workers W]`
//!
//! The config file holds `key = value` lines; `#` starts a comment and
//! unknown keys are rejected. Flags override config values. Every output
//! file starts with `#` lines recording the resolved config.

use crate::fluctuation::{coupled_fluctuation, CouplingOptions};
use crate::jump_sim::{simulate_scaled_with, JumpOptions};
use crate::models;
use crate::network::{parse_network, HybridState, NetworkError, ReactionNetwork};
use crate::path::{PathRecord, SimError, DEFAULT_EVENT_CAP, DEFAULT_GRID};
use crate::pdmp_sim::{simulate_pdmp_with, PdmpOptions, DEFAULT_RTOL};
use crate::stats::{clt_compare, strong_error_sweep, CltOptions, ConvergenceReport, StatsError};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("network error: {0}")]
    Network(#[from] NetworkError),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Network(_) => 3,
            CliError::Simulation(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Network(n) => CliError::Network(n),
            SimError::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Simulation(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Simulation { source, replica } => match CliError::from(source) {
                CliError::Simulation(m) => CliError::Simulation(format!("replica {replica}: {m}")),
                other => other,
            },
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate one path of the scaled jump process.
    Simulate,
    /// Simulate one path of the piecewise deterministic limit.
    Pdmp,
    /// Strong error sweep over the N list with a fitted rate.
    Converge,
    /// Compare the fluctuations at T with the limiting SDE.
    Clt,
    /// Parse and validate the network.
    Validate,
    /// Decompose the fluctuations of one coupled pair.
    Fluctuation,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Simulate => "simulate",
            Command::Pdmp => "pdmp",
            Command::Converge => "converge",
            Command::Clt => "clt",
            Command::Validate => "validate",
            Command::Fluctuation => "fluctuation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Parser)]
#[command(name = "msgn", about = "Coupled simulation of multiscale stochastic gene networks")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Simulate one path of the scaled jump process.
    Simulate(RunArgs),
    /// Simulate one path of the piecewise deterministic limit.
    Pdmp(RunArgs),
    /// Strong error sweep over the N list with a fitted rate.
    Converge(RunArgs),
    /// Compare the fluctuations at T with the limiting SDE.
    Clt(RunArgs),
    /// Parse and validate the network.
    Validate(RunArgs),
    /// Decompose the fluctuations of one coupled pair.
    Fluctuation(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Size of the replica worker pool.
    #[arg(long)]
    workers: Option<usize>,
}

/// Where the network comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSource {
    File(PathBuf),
    /// A bundled model, written `builtin:NAME` in the config.
    Builtin(String),
}

impl fmt::Display for NetworkSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkSource::File(p) => write!(f, "{}", p.display()),
            NetworkSource::Builtin(n) => write!(f, "builtin:{n}"),
        }
    }
}

/// Initial state as written in the config: `x_1 ... x_n | y_1 ... y_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub x: Vec<f64>,
    pub y: Vec<i64>,
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let xs: Vec<String> = self.x.iter().map(|v| format!("{v:?}")).collect();
        let ys: Vec<String> = self.y.iter().map(|v| v.to_string()).collect();
        write!(f, "{} | {}", xs.join(" "), ys.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub network: Option<NetworkSource>,
    pub z0: Option<StateSpec>,
    pub z0n: Option<StateSpec>,
    pub horizon: Option<f64>,
    pub n: Option<u64>,
    pub n_list: Vec<u64>,
    pub replicas: u64,
    pub sde_replicas: u64,
    pub seed: u64,
    pub replica: u64,
    pub grid: usize,
    pub tol: f64,
    pub sde_steps: usize,
    pub event_cap: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: None,
            z0: None,
            z0n: None,
            horizon: None,
            n: None,
            n_list: Vec::new(),
            replicas: 100,
            sde_replicas: 1000,
            seed: 0,
            replica: 0,
            grid: DEFAULT_GRID,
            tol: DEFAULT_RTOL,
            sde_steps: crate::fluctuation::DEFAULT_SDE_STEPS,
            event_cap: DEFAULT_EVENT_CAP,
            out: PathBuf::from("."),
            workers: None,
        }
    }
}

const KEYS: [&str; 16] = [
    "network",
    "z0",
    "z0N",
    "T",
    "N",
    "N_list",
    "M",
    "M_sde",
    "seed",
    "replica",
    "grid",
    "tol",
    "sde_steps",
    "event_cap",
    "out",
    "workers",
];

fn cfg_err(line: usize, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse::<T>()
        .map_err(|_| cfg_err(line, format!("invalid value '{v}' for {key}")))
}

fn parse_positive_f64(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = parse_num(line, key, v)?;
    if !(x.is_finite() && x > 0.0) {
        return Err(cfg_err(line, format!("{key} must be positive, got {v}")));
    }
    Ok(x)
}

fn parse_positive_int(line: usize, key: &str, v: &str) -> Result<u64, CliError> {
    let x: u64 = parse_num(line, key, v)?;
    if x == 0 {
        return Err(cfg_err(line, format!("{key} must be positive")));
    }
    Ok(x)
}

fn parse_state(line: usize, key: &str, v: &str) -> Result<StateSpec, CliError> {
    let (xs, ys) = match v.split_once('|') {
        Some((a, b)) => (a, b),
        None => (v, ""),
    };
    let x = xs
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<f64>(line, key, s))
        .collect::<Result<Vec<_>, _>>()?;
    let y = ys
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<i64>(line, key, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StateSpec { x, y })
}

impl ExperimentConfig {
    /// Parses config text. Relative network paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(cfg_err(line, format!("unknown key '{key}'")));
            }
            if seen.contains(&key.to_string()) {
                return Err(cfg_err(line, format!("duplicate key '{key}'")));
            }
            seen.push(key.to_string());
            match key {
                "network" => {
                    cfg.network = Some(match value.strip_prefix("builtin:") {
                        Some(name) => NetworkSource::Builtin(name.to_string()),
                        None => NetworkSource::File(base.join(value)),
                    })
                }
                "z0" => cfg.z0 = Some(parse_state(line, key, value)?),
                "z0N" => cfg.z0n = Some(parse_state(line, key, value)?),
                "T" => cfg.horizon = Some(parse_positive_f64(line, key, value)?),
                "N" => cfg.n = Some(parse_positive_int(line, key, value)?),
                "N_list" => {
                    let list = value
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_positive_int(line, key, s))
                        .collect::<Result<Vec<_>, _>>()?;
                    if list.is_empty() {
                        return Err(cfg_err(line, "N_list is empty"));
                    }
                    if list.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(cfg_err(line, "N_list must be sorted ascending"));
                    }
                    cfg.n_list = list;
                }
                "M" => {
                    cfg.replicas = parse_positive_int(line, key, value)?;
                    if cfg.replicas < 2 {
                        return Err(cfg_err(line, "M must be at least 2"));
                    }
                }
                "M_sde" => {
                    cfg.sde_replicas = parse_positive_int(line, key, value)?;
                    if cfg.sde_replicas < 2 {
                        return Err(cfg_err(line, "M_sde must be at least 2"));
                    }
                }
                "seed" => cfg.seed = parse_num(line, key, value)?,
                "replica" => cfg.replica = parse_num(line, key, value)?,
                "grid" => cfg.grid = parse_positive_int(line, key, value)? as usize,
                "tol" => cfg.tol = parse_positive_f64(line, key, value)?,
                "sde_steps" => cfg.sde_steps = parse_positive_int(line, key, value)? as usize,
                "event_cap" => cfg.event_cap = parse_positive_int(line, key, value)?,
                "out" => cfg.out = base.join(value),
                "workers" => cfg.workers = Some(parse_positive_int(line, key, value)? as usize),
                _ => unreachable!(),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// `# key = value` lines for output headers.
    pub fn header(&self, command: Command) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "unset".into());
        let lines = [
            ("network", opt(self.network.as_ref().map(|v| v.to_string()))),
            ("z0", opt(self.z0.as_ref().map(|v| v.to_string()))),
            (
                "z0N",
                opt(self.z0n.as_ref().or(self.z0.as_ref()).map(|v| v.to_string())),
            ),
            ("T", opt(self.horizon.map(|v| format!("{v:?}")))),
            ("N", opt(self.n.map(|v| v.to_string()))),
            (
                "N_list",
                self.n_list
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("M", self.replicas.to_string()),
            ("M_sde", self.sde_replicas.to_string()),
            ("seed", self.seed.to_string()),
            ("replica", self.replica.to_string()),
            ("grid", self.grid.to_string()),
            ("tol", format!("{:e}", self.tol)),
            ("sde_steps", self.sde_steps.to_string()),
            ("event_cap", self.event_cap.to_string()),
            ("out", self.out.display().to_string()),
            ("workers", opt(self.workers.map(|v| v.to_string()))),
        ];
        let mut s = format!("# msgn {command}\n");
        for (k, v) in lines {
            s.push_str(&format!("# {k} = {v}\n"));
        }
        s
    }

    fn require<T: Clone>(&self, v: &Option<T>, key: &str, command: Command) -> Result<T, CliError> {
        v.clone()
            .ok_or_else(|| CliError::Config(format!("'{key}' is required for {command}")))
    }

    fn load_network(&self, command: Command) -> Result<ReactionNetwork, CliError> {
        match self.require(&self.network, "network", command)? {
            NetworkSource::File(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| CliError::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
                Ok(parse_network(&text)?)
            }
            NetworkSource::Builtin(name) => {
                let text = match name.as_str() {
                    "telegraph" => models::TELEGRAPH,
                    "telegraph_feedback" => models::TELEGRAPH_FEEDBACK,
                    "telegraph_burst" => models::TELEGRAPH_BURST,
                    "pure_birth" => models::PURE_BIRTH,
                    other => {
                        return Err(CliError::Config(format!("unknown builtin network '{other}'")))
                    }
                };
                Ok(parse_network(text)?)
            }
        }
    }

    fn states(&self, net: &ReactionNetwork, command: Command) -> Result<(HybridState, HybridState), CliError> {
        let z0 = self.require(&self.z0, "z0", command)?;
        let z0n = self.z0n.clone().unwrap_or_else(|| z0.clone());
        let build = |s: StateSpec, key: &str| -> Result<HybridState, CliError> {
            if s.x.len() != net.n() || s.y.len() != net.d() {
                return Err(CliError::Config(format!(
                    "{key} has {} continuous and {} discrete components, network needs {} and {}",
                    s.x.len(),
                    s.y.len(),
                    net.n(),
                    net.d()
                )));
            }
            HybridState::new(s.x, s.y).map_err(|e| CliError::Config(format!("{key}: {e}")))
        };
        Ok((build(z0n, "z0N")?, build(z0, "z0")?))
    }

    fn coupling(&self) -> CouplingOptions {
        CouplingOptions {
            grid: self.grid,
            event_cap: self.event_cap,
            rtol: self.tol,
            atol: self.tol * 1e-2,
        }
    }
}

/// Files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    header: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = self.header.clone().into_bytes();
        body(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, buf)?;
        self.files.push(path);
        Ok(())
    }
}

fn path_summary(path: &PathRecord, label: &str) -> String {
    let last = path.grid.last().expect("grid is never empty");
    format!(
        "{label} on [0, {}]: {} events, J_T = {}, final state x = {:?}, y = {:?}\n",
        path.horizon,
        path.events.len(),
        path.total_discrete_jumps(),
        last.state.x(),
        last.state.y()
    )
}

fn report_files(w: &mut Writer<'_>, report: &ConvergenceReport) -> io::Result<()> {
    w.write("report.csv", |b| report.write_csv(b))?;
    let summary = report.summary();
    w.write("summary.txt", |b| b.write_all(summary.as_bytes()))?;
    w.write("plot.script", |b| b.write_all(report.plot_script().as_bytes()))
}

/// Runs one command with a resolved config.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_inner(command, cfg))
}

fn run_inner(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let net = cfg.load_network(command)?;
    fs::create_dir_all(&cfg.out)?;
    let mut w = Writer {
        dir: &cfg.out,
        header: cfg.header(command),
        files: Vec::new(),
    };
    let summary = match command {
        Command::Validate => {
            let s = format!(
                "network is valid\nn = {}\nd = {}\n|R_C| = {}\n|R_D| = {}\ncontinuous species: {}\n\
                 discrete species: {}\nreactions: {}\nrate bound: {}\n",
                net.n(),
                net.d(),
                net.continuous_reactions().len(),
                net.discrete_reactions().len(),
                net.continuous_species().join(" "),
                net.discrete_species().join(" "),
                net.reactions()
                    .iter()
                    .map(|r| r.id.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                net.rate_bound()
                    .map_or("none".to_string(), |b| b.to_string())
            );
            w.write("summary.txt", |b| b.write_all(s.as_bytes()))?;
            s
        }
        Command::Simulate | Command::Pdmp => {
            let horizon = cfg.require(&cfg.horizon, "T", command)?;
            let (z0n, z0) = cfg.states(&net, command)?;
            let path = if command == Command::Simulate {
                let n = cfg.require(&cfg.n, "N", command)?;
                let opts = JumpOptions {
                    grid: cfg.grid,
                    event_cap: cfg.event_cap,
                };
                simulate_scaled_with(&net, n, &z0n, horizon, cfg.seed, cfg.replica, &opts)?
            } else {
                let c = cfg.coupling();
                let opts = PdmpOptions {
                    grid: c.grid,
                    event_cap: c.event_cap,
                    rtol: c.rtol,
                    atol: c.atol,
                };
                simulate_pdmp_with(&net, &z0, horizon, cfg.seed, cfg.replica, &opts)?
            };
            w.write("path.csv", |b| path.write_grid_csv(b))?;
            w.write("events.csv", |b| path.write_events_csv(b))?;
            let label = if command == Command::Simulate {
                "jump path"
            } else {
                "PDMP path"
            };
            let s = path_summary(&path, label);
            w.write("summary.txt", |b| b.write_all(s.as_bytes()))?;
            s
        }
        Command::Converge => {
            let horizon = cfg.require(&cfg.horizon, "T", command)?;
            let (z0n, z0) = cfg.states(&net, command)?;
            if cfg.n_list.is_empty() {
                return Err(CliError::Config("'N_list' is required for converge".into()));
            }
            let report = strong_error_sweep(
                &net,
                &z0n,
                &z0,
                horizon,
                &cfg.n_list,
                cfg.replicas,
                cfg.seed,
                &cfg.coupling(),
            )?;
            report_files(&mut w, &report)?;
            report.summary()
        }
        Command::Clt => {
            let horizon = cfg.require(&cfg.horizon, "T", command)?;
            let n = cfg.require(&cfg.n, "N", command)?;
            let (z0n, z0) = cfg.states(&net, command)?;
            let opts = CltOptions {
                coupling: cfg.coupling(),
                sde_steps: cfg.sde_steps,
            };
            let block = clt_compare(
                &net,
                &z0n,
                &z0,
                horizon,
                n,
                cfg.replicas,
                cfg.sde_replicas,
                cfg.seed,
                &opts,
            )?;
            let report = ConvergenceReport {
                horizon,
                seed: cfg.seed,
                rows: Vec::new(),
                fit: None,
                clt: Some(block),
                warnings: Vec::new(),
            };
            let clt = report.clt.as_ref().unwrap();
            w.write("report.csv", |b| {
                writeln!(
                    b,
                    "species,vn_mean,vn_mean_se,v_mean,v_mean_se,vn_var,vn_var_se,v_var,v_var_se,ks_D,ks_p"
                )?;
                for c in &clt.coordinates {
                    writeln!(
                        b,
                        "{},{},{},{},{},{},{},{},{},{},{}",
                        c.species,
                        c.vn_mean.mean,
                        c.vn_mean.se,
                        c.v_mean.mean,
                        c.v_mean.se,
                        c.vn_var.mean,
                        c.vn_var.se,
                        c.v_var.mean,
                        c.v_var.se,
                        c.ks.statistic,
                        c.ks.p_value
                    )?;
                }
                Ok(())
            })?;
            let s = report.summary();
            w.write("summary.txt", |b| b.write_all(s.as_bytes()))?;
            w.write("plot.script", |b| b.write_all(report.plot_script().as_bytes()))?;
            s
        }
        Command::Fluctuation => {
            let horizon = cfg.require(&cfg.horizon, "T", command)?;
            let n = cfg.require(&cfg.n, "N", command)?;
            let (z0n, z0) = cfg.states(&net, command)?;
            let dec = coupled_fluctuation(
                &net,
                n,
                &z0n,
                &z0,
                horizon,
                cfg.seed,
                cfg.replica,
                &cfg.coupling(),
            )?;
            w.write("decomposition.csv", |b| dec.write_csv(b))?;
            let worst = (0..dec.times.len())
                .map(|g| dec.residual(g) / dec.tolerance(g).max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            let m = &dec.metrics;
            let s = format!(
                "coupled pair N = {n} on [0, {horizon}]\nsup|Z^N - Z| = {}\nsup|M^N| = {}\n\
                 sup|gamma^N| = {}\nY^N = Y: {}\nV^N(T) = {:?}\n\
                 largest identity residual / tolerance = {worst:.3e}\n",
                m.sup_error, m.sup_martingale, m.sup_gamma, m.y_equal, m.v_final
            );
            w.write("summary.txt", |b| b.write_all(s.as_bytes()))?;
            s
        }
    };
    Ok(RunOutcome {
        files: w.files,
        summary,
    })
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Pdmp(a) => (Command::Pdmp, a),
        CliCommand::Converge(a) => (Command::Converge, a),
        CliCommand::Clt(a) => (Command::Clt, a),
        CliCommand::Validate(a) => (Command::Validate, a),
        CliCommand::Fluctuation(a) => (Command::Fluctuation, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(o) = args.out {
            cfg.out = o;
        }
        if let Some(w) = args.workers {
            if w == 0 {
                return Err(CliError::Config("--workers must be positive".into()));
            }
            cfg.workers = Some(w);
        }
        run(command, &cfg)
    });
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            0
        }
        Err(e) => {
            eprintln!("msgn: {e}");
            e.exit_code()
        }
    }
}
