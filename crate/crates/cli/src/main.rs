use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmplace::aco::AcoParams;
use vmplace::config::resolve_host;
use vmplace::cost::{parse_weights, p_best};
use vmplace::experiment::{self, RunConfig, SweepAxis};
use vmplace::model::HostModel;
use vmplace::sim::Policy;
use vmplace::workload::{ScenarioConfig, TraceStore};
use vmplace::{Error, Result};

const DEFAULT_POLICIES: &str = "aco,rr2,rr4,rr6,rr8,pssf2,pssf4,pssf6,pssf8";

#[derive(Parser)]
#[command(name = "vmplace", version, about = "Secure, energy-aware VM placement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario under one policy and write its outputs.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output root; files land in <out>/<config-hash>-s<seed>/.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score several policies on identical arrival streams.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy labels.
        #[arg(long, default_value = DEFAULT_POLICIES)]
        policies: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the scenario once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha, beta, phi, p_malicious, w_security, window_length or lambda.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (may be empty).
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled host power models.
    Hosts,
    /// Write a synthetic trace pack as CSV files.
    GenTraces {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; built-in defaults when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// aco, rr, pssf, or a preset label such as rr4 / pssf6.
    #[arg(long, default_value = "aco")]
    policy: String,
    /// Group size for rr / pssf.
    #[arg(long)]
    k: Option<usize>,
    /// Pheromone exponent, in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Heuristic exponent, in [0, 1].
    #[arg(long)]
    beta: Option<f64>,
    /// Pheromone evaporation rate, in [0, 1].
    #[arg(long)]
    phi: Option<f64>,
    /// Ants per iteration.
    #[arg(long)]
    ants: Option<usize>,
    /// Iterations per server-count subproblem.
    #[arg(long)]
    iters: Option<usize>,
    /// Cap on PMs the ACO may occupy at once.
    #[arg(long)]
    max_servers: Option<usize>,
    /// Security, power and balance weights: w1,w2,w3.
    #[arg(long)]
    weights: Option<String>,
    /// Probability that a user is malicious.
    #[arg(long)]
    p_malicious: Option<f64>,
    /// Time window length in seconds.
    #[arg(long)]
    window: Option<f64>,
    /// Arrival rate (users per second).
    #[arg(long)]
    lambda: Option<f64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Scenario seed; compare and sweep use seed..seed+repeats-1.
    #[arg(long)]
    seed: Option<u64>,
    /// Host preset name or host TOML path.
    #[arg(long, default_value = "dell-r820")]
    host: String,
    /// Trace directory (.csv offset/percent files or daily sample files).
    #[arg(long)]
    traces: Option<PathBuf>,
}

impl Common {
    fn aco_params(&self) -> AcoParams {
        let d = AcoParams::default();
        AcoParams {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            phi: self.phi.unwrap_or(d.phi),
            n_ants: self.ants.unwrap_or(d.n_ants),
            n_iterations: self.iters.unwrap_or(d.n_iterations),
            max_servers: self.max_servers,
            ..d
        }
    }

    fn policy_from(&self, label: &str) -> Result<Policy> {
        let label = match (label, self.k) {
            ("rr" | "pssf", Some(k)) => format!("{label}{k}"),
            ("rr" | "pssf", None) => format!("{label}2"),
            (other, _) => other.to_string(),
        };
        Policy::from_label(&label, &self.aco_params())
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut scenario = match &self.scenario {
            Some(p) => input(ScenarioConfig::load(p))?,
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.p_malicious {
            scenario.p_malicious = v;
        }
        if let Some(v) = self.window {
            scenario.window_length = v;
        }
        if let Some(v) = self.lambda {
            scenario.lambda_rate = v;
        }
        if let Some(v) = self.duration {
            scenario.duration = v;
        }
        if let Some(v) = self.seed {
            scenario.seed = v;
        }
        let mut cfg = RunConfig::new(scenario, self.policy_from(&self.policy)?);
        cfg.host = input(resolve_host(&self.host))?;
        if let Some(w) = &self.weights {
            cfg.weights = parse_weights(w)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn traces(&self) -> Result<TraceStore> {
        match &self.traces {
            Some(dir) => input(TraceStore::load_dir(dir)),
            None => Ok(TraceStore::synthetic(16, 0)),
        }
    }
}

/// An unreadable input file is bad user input, not an internal failure.
fn input<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { path, source } => Error::Config { field: path.display().to_string(), reason: source.to_string() },
        other => other,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::Config { field: "values".into(), reason: format!("`{s}`: {e}") }))
        .collect()
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, out } => {
            let cfg = common.run_config()?;
            let traces = common.traces()?;
            let art = experiment::run_to_dir(&cfg, &traces, &out)?;
            let s = &art.output.summary;
            let f = &s.final_cost;
            println!(
                "policy={} seed={} mean_total={:.6} final_total={:.6} security={:.6} power={:.6} imbalance={:.6} pms={} vms={} migrations={} dir={}",
                cfg.policy.label(),
                cfg.scenario.seed,
                s.mean_total,
                f.total,
                f.security,
                f.power,
                f.imbalance,
                s.final_occupied_pms,
                s.vms_placed,
                s.migrations,
                art.dir.display()
            );
            Ok(())
        }
        Command::Compare { common, policies, repeats, out } => {
            let cfg = common.run_config()?;
            let traces = common.traces()?;
            let policies = policies
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|l| common.policy_from(l))
                .collect::<Result<Vec<_>>>()?;
            if policies.is_empty() {
                return Err(Error::Config { field: "policies".into(), reason: "no policy given".into() });
            }
            let rows = experiment::compare(&cfg, &policies, &traces, repeats)?;
            let header = experiment::provenance(&experiment::config_hash(&cfg, &traces), cfg.scenario.seed);
            emit(out.as_deref(), &experiment::compare_csv(&rows, &header))
        }
        Command::Sweep { common, axis, values, repeats, out } => {
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            let cfg = common.run_config()?;
            let traces = common.traces()?;
            let rows = experiment::sweep(&cfg, axis, &values, &traces, repeats)?;
            let header = experiment::provenance(&experiment::config_hash(&cfg, &traces), cfg.scenario.seed);
            emit(out.as_deref(), &experiment::sweep_csv(&rows, &header))
        }
        Command::Hosts => {
            println!("name,capacity_mips,p_best_watts");
            for name in HostModel::preset_names() {
                let h = HostModel::preset(name).expect("listed preset");
                println!("{name},{},{}", h.capacity_mips(), p_best(&h));
            }
            Ok(())
        }
        Command::GenTraces { dir, count, seed } => {
            if count == 0 {
                return Err(Error::Config { field: "count".into(), reason: "must be >= 1".into() });
            }
            TraceStore::synthetic(count, seed).write_dir(&dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() {
                2
            } else if e.is_allocation_error() {
                3
            } else {
                1
            })
        }
    }
}
