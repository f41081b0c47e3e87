//! Experiment plumbing: run configs, output files, policy comparisons and
//! parameter sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aco::AcoParams;
use crate::cost::{CostModel, CostWeights, SecurityContext, SecurityDenominator};
use crate::error::{Error, Result};
use crate::model::HostModel;
use crate::rng::{derive_seed, ACO_STREAM};
use crate::sim::{self, Policy, SimOptions, SimOutput};
use crate::workload::{generate_scenario, ScenarioConfig, TraceStore};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything that determines one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub host: HostModel,
    pub policy: Policy,
    pub weights: CostWeights,
    pub denominator: SecurityDenominator,
}

impl RunConfig {
    pub fn new(scenario: ScenarioConfig, policy: Policy) -> Self {
        Self {
            scenario,
            host: HostModel::dell_r820(),
            policy,
            weights: CostWeights::equal(),
            denominator: SecurityDenominator::Occupied,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.weights.validate()?;
        match &self.policy {
            Policy::Aco(p) => p.validate(),
            Policy::RoundRobin { k } | Policy::Pssf { k } if *k == 0 => Err(Error::config("k", "must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let mut ctx = SecurityContext::new(self.scenario.p_malicious)?;
        ctx.denominator = self.denominator;
        Ok(CostModel::new(ctx, self.weights))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.scenario.seed = seed;
        c
    }

    fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            scenario: &'a ScenarioConfig,
            host: &'a str,
            capacity_mips: f64,
            watts: &'a [f64; 11],
            policy: &'a Policy,
            weights: &'a CostWeights,
            denominator: &'a SecurityDenominator,
        }
        serde_json::to_string(&View {
            scenario: &self.scenario,
            host: self.host.name(),
            capacity_mips: self.host.capacity_mips(),
            watts: self.host.curve().watts(),
            policy: &self.policy,
            weights: &self.weights,
            denominator: &self.denominator,
        })
        .expect("plain data serializes")
    }
}

/// Short content hash of the run config together with the traces it reads.
pub fn config_hash(config: &RunConfig, traces: &TraceStore) -> String {
    let mut h = Sha256::new();
    h.update(config.canonical_json().as_bytes());
    for t in traces.iter() {
        h.update(t.name().as_bytes());
        h.update(t.to_csv().as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub fn provenance(hash: &str, seed: u64) -> String {
    format!("# vmplace {VERSION} config_hash={hash} seed={seed}\n")
}

/// Generate the scenario and simulate it. Scenario and allocator draw from
/// separate streams, so the policy never shifts arrivals.
pub fn execute(config: &RunConfig, traces: &TraceStore) -> Result<SimOutput> {
    config.validate()?;
    let scenario = generate_scenario(&config.scenario, traces)?;
    let options = SimOptions {
        tick: config.scenario.tick,
        aco_seed: derive_seed(config.scenario.seed, ACO_STREAM),
    };
    sim::run(&scenario, traces, &config.host, &config.cost_model()?, &config.policy, &options)
}

fn to_csv<T: Serialize>(header: &str, rows: &[T], columns: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
    format!("{header}{body}")
}

pub fn metrics_csv(out: &SimOutput, header: &str) -> String {
    to_csv(
        header,
        &out.metrics,
        &["time", "security", "power", "imbalance", "total", "occupied_pms", "migrations_cum", "vms_active"],
    )
}

pub fn migrations_csv(out: &SimOutput, header: &str) -> String {
    to_csv(header, &out.migrations, &["time", "vm", "from_pm", "to_pm", "migration_seconds"])
}

pub fn convergence_csv(out: &SimOutput, header: &str) -> String {
    to_csv(header, &out.convergence, &["window", "n_s", "iteration", "best_cost"])
}

pub fn windows_csv(out: &SimOutput, header: &str) -> String {
    to_csv(header, &out.windows, &["window", "time", "batch_size", "n_s", "occupied_after", "total"])
}

pub fn final_allocation_json(out: &SimOutput, hash: &str, seed: u64) -> String {
    #[derive(Serialize)]
    struct Vm {
        vm: u32,
        owner: u32,
        pm: u32,
        demand: f64,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        version: &'a str,
        config_hash: &'a str,
        seed: u64,
        occupied_pms: Vec<u32>,
        vms: Vec<Vm>,
    }
    let s = &out.final_state;
    let doc = Doc {
        version: VERSION,
        config_hash: hash,
        seed,
        occupied_pms: s.active_pms().map(|p| p.0).collect(),
        vms: s
            .vms()
            .map(|(id, p)| Vm { vm: id.0, owner: p.owner.0, pm: p.pm.0, demand: p.demand })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    text
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub hash: String,
    pub output: SimOutput,
}

/// Run and write `metrics.csv`, `migrations.csv`, `windows.csv`,
/// `final_allocation.json` (and `aco_convergence.csv` for ACO) into
/// `<out_root>/<config-hash>-s<seed>/`.
pub fn run_to_dir(config: &RunConfig, traces: &TraceStore, out_root: &Path) -> Result<RunArtifacts> {
    let output = execute(config, traces)?;
    let hash = config_hash(config, traces);
    let seed = config.scenario.seed;
    let dir = out_root.join(format!("{hash}-s{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let header = provenance(&hash, seed);
    write(dir.join("metrics.csv"), &metrics_csv(&output, &header))?;
    write(dir.join("migrations.csv"), &migrations_csv(&output, &header))?;
    write(dir.join("windows.csv"), &windows_csv(&output, &header))?;
    write(dir.join("final_allocation.json"), &final_allocation_json(&output, &hash, seed))?;
    if matches!(config.policy, Policy::Aco(_)) {
        write(dir.join("aco_convergence.csv"), &convergence_csv(&output, &header))?;
    }
    Ok(RunArtifacts { dir, hash, output })
}

/// Seed-averaged costs of one policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyScore {
    pub policy: String,
    pub total: f64,
    pub security: f64,
    pub power: f64,
    pub imbalance: f64,
    pub final_total: f64,
    pub final_occupied_pms: f64,
    pub migrations: f64,
}

/// Run `config` for seeds `seed .. seed + repeats` and average the summaries.
pub fn score(config: &RunConfig, traces: &TraceStore, repeats: usize) -> Result<PolicyScore> {
    if repeats == 0 {
        return Err(Error::config("repeats", "must be >= 1"));
    }
    let mut s = PolicyScore {
        policy: config.policy.label(),
        total: 0.0,
        security: 0.0,
        power: 0.0,
        imbalance: 0.0,
        final_total: 0.0,
        final_occupied_pms: 0.0,
        migrations: 0.0,
    };
    for r in 0..repeats {
        let out = execute(&config.with_seed(config.scenario.seed.wrapping_add(r as u64)), traces)?;
        let m = &out.summary;
        s.total += m.mean_total;
        s.security += m.mean_security;
        s.power += m.mean_power;
        s.imbalance += m.mean_imbalance;
        s.final_total += m.final_cost.total;
        s.final_occupied_pms += m.final_occupied_pms as f64;
        s.migrations += m.migrations as f64;
    }
    let n = repeats as f64;
    for v in [
        &mut s.total,
        &mut s.security,
        &mut s.power,
        &mut s.imbalance,
        &mut s.final_total,
        &mut s.final_occupied_pms,
        &mut s.migrations,
    ] {
        *v /= n;
    }
    Ok(s)
}

const SCORE_COLUMNS: [&str; 8] = [
    "policy",
    "total",
    "security",
    "power",
    "imbalance",
    "final_total",
    "final_occupied_pms",
    "migrations",
];

/// Score every policy on the same arrival streams.
pub fn compare(base: &RunConfig, policies: &[Policy], traces: &TraceStore, repeats: usize) -> Result<Vec<PolicyScore>> {
    policies
        .iter()
        .map(|p| {
            let cfg = RunConfig { policy: p.clone(), ..base.clone() };
            score(&cfg, traces, repeats)
        })
        .collect()
}

pub fn compare_csv(rows: &[PolicyScore], header: &str) -> String {
    to_csv(header, rows, &SCORE_COLUMNS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Beta,
    Phi,
    PMalicious,
    WSecurity,
    WindowLength,
    Lambda,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::Alpha,
        SweepAxis::Beta,
        SweepAxis::Phi,
        SweepAxis::PMalicious,
        SweepAxis::WSecurity,
        SweepAxis::WindowLength,
        SweepAxis::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Phi => "phi",
            SweepAxis::PMalicious => "p_malicious",
            SweepAxis::WSecurity => "w_security",
            SweepAxis::WindowLength => "window_length",
            SweepAxis::Lambda => "lambda",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        fn aco(axis: SweepAxis, c: &mut RunConfig) -> Result<&mut AcoParams> {
            match &mut c.policy {
                Policy::Aco(p) => Ok(p),
                _ => Err(Error::config("axis", format!("axis `{}` needs the aco policy", axis.name()))),
            }
        }
        match self {
            SweepAxis::Alpha => aco(self, &mut c)?.alpha = value,
            SweepAxis::Beta => aco(self, &mut c)?.beta = value,
            SweepAxis::Phi => aco(self, &mut c)?.phi = value,
            SweepAxis::PMalicious => c.scenario.p_malicious = value,
            SweepAxis::WSecurity => c.weights = CostWeights::with_security(value)?,
            SweepAxis::WindowLength => {
                c.scenario.window_length = value;
                c.scenario.duration = c.scenario.duration.max(value);
            }
            SweepAxis::Lambda => c.scenario.lambda_rate = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
            Error::config("axis", format!("unknown axis `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: f64,
    #[serde(flatten)]
    pub score: PolicyScore,
}

/// Replay the base scenario once per value (same seeds).
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], traces: &TraceStore, repeats: usize) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|v| {
            let cfg = axis.apply(base, *v)?;
            Ok(SweepRow { axis: axis.name().into(), axis_value: *v, score: score(&cfg, traces, repeats)? })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], header: &str) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let mut columns = vec!["axis", "axis_value"];
    columns.extend(SCORE_COLUMNS);
    w.write_record(&columns).expect("in-memory write");
    for r in rows {
        let s = &r.score;
        w.write_record([
            r.axis.clone(),
            r.axis_value.to_string(),
            s.policy.clone(),
            s.total.to_string(),
            s.security.to_string(),
            s.power.to_string(),
            s.imbalance.to_string(),
            s.final_total.to_string(),
            s.final_occupied_pms.to_string(),
            s.migrations.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
    format!("{header}{body}")
}
