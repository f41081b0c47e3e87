//! Scenario synthesis: Poisson user arrivals, VM stamping with malicious
//! labels, utilization traces and time-window batching.

use std::fs;
use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{UserId, VmId, VmRequest, VmTemplate};

/// How many VMs one arriving user requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum VmsPerUser {
    Fixed(u32),
    Uniform { min: u32, max: u32 },
}

impl Default for VmsPerUser {
    fn default() -> Self {
        VmsPerUser::Fixed(2)
    }
}

impl VmsPerUser {
    fn validate(&self) -> Result<()> {
        match *self {
            VmsPerUser::Fixed(0) => Err(Error::config("vms_per_user", "must be >= 1")),
            VmsPerUser::Uniform { min, max } if min == 0 || min > max => Err(Error::config(
                "vms_per_user",
                format!("uniform range [{min}, {max}] must satisfy 1 <= min <= max"),
            )),
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        match *self {
            VmsPerUser::Fixed(n) => n,
            VmsPerUser::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

fn default_tick() -> f64 {
    60.0
}

/// Everything needed to regenerate one arrival stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Mean user arrivals per second.
    pub lambda_rate: f64,
    /// Seconds of arrivals.
    pub duration: f64,
    pub window_length: f64,
    #[serde(default)]
    pub vms_per_user: VmsPerUser,
    pub p_malicious: f64,
    #[serde(default)]
    pub seed: u64,
    /// Metric sampling interval in seconds.
    #[serde(default = "default_tick")]
    pub tick: f64,
    #[serde(default)]
    pub vm: VmTemplate,
    /// VM lifetime in seconds; absent means VMs never depart.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_lifetime: Option<f64>,
    /// Use `-ln(R / lambda)` (clamped at zero) instead of `-ln(R) / lambda`.
    #[serde(default)]
    pub literal_interarrival: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 0.004,
            duration: 10_000.0,
            window_length: 1000.0,
            vms_per_user: VmsPerUser::default(),
            p_malicious: 0.2,
            seed: 0,
            tick: default_tick(),
            vm: VmTemplate::default(),
            vm_lifetime: None,
            literal_interarrival: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rate.is_finite() && self.lambda_rate > 0.0) {
            return Err(Error::config("lambda_rate", "must be > 0"));
        }
        if !(self.window_length.is_finite() && self.window_length > 0.0) {
            return Err(Error::config("window_length", "must be > 0"));
        }
        if !(self.duration.is_finite() && self.duration >= self.window_length) {
            return Err(Error::config("duration", "must be finite and >= window_length"));
        }
        if !(0.0..=1.0).contains(&self.p_malicious) {
            return Err(Error::config("p_malicious", "must be in [0, 1]"));
        }
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return Err(Error::config("tick", "must be > 0"));
        }
        if let Some(l) = self.vm_lifetime {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::config("vm_lifetime", "must be > 0"));
            }
        }
        // Bound the event count so a typo cannot allocate the world.
        if self.lambda_rate * self.duration > 1e7 {
            return Err(Error::config("lambda_rate", "lambda_rate * duration exceeds 1e7 arrivals"));
        }
        if self.duration / self.window_length > 1e7 || self.duration / self.tick > 1e8 {
            return Err(Error::config("duration", "too many windows or ticks"));
        }
        self.vms_per_user.validate()?;
        self.vm.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse("scenario config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// Maps a uniform draw `r` in (0, 1) to an exponential interarrival gap.
pub fn interarrival_from_uniform(r: f64, lambda: f64) -> f64 {
    -r.ln() / lambda
}

/// The formula exactly as printed in the source material. Negative for most
/// draws, hence the clamp; kept only for comparison runs.
pub fn literal_interarrival_from_uniform(r: f64, lambda: f64) -> f64 {
    (-(r / lambda).ln()).max(0.0)
}

pub fn sample_interarrival(rng: &mut impl Rng, lambda: f64) -> f64 {
    let r: f64 = rng.sample(Open01);
    interarrival_from_uniform(r, lambda)
}

/// A utilization time series. Values are fractions in [0, 1]; each sample
/// holds until the next offset, and the series repeats with `period`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    name: String,
    offsets: Vec<f64>,
    values: Vec<f64>,
    period: f64,
}

impl Trace {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::parse("trace", "no samples"));
        }
        for (i, (t, u)) in points.iter().enumerate() {
            if !(t.is_finite() && *t >= 0.0) {
                return Err(Error::parse("trace", format!("row {i}: bad offset {t}")));
            }
            if !(0.0..=1.0).contains(u) {
                return Err(Error::parse("trace", format!("row {i}: utilization {u} outside [0, 1]")));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::parse(
                "trace",
                format!("offsets not strictly increasing at row {}", i + 1),
            ));
        }
        let n = points.len();
        let last = points[n - 1].0;
        // The final sample lasts as long as the step before it.
        let period = if n >= 2 { last + (last - points[n - 2].0) } else { last + 1.0 };
        if !(period.is_finite() && period > last) {
            return Err(Error::parse("trace", format!("offsets too large to wrap (last {last})")));
        }
        let (offsets, values) = points.into_iter().unzip();
        Ok(Self {
            name: name.into(),
            offsets,
            values,
            period,
        })
    }

    pub fn constant(name: impl Into<String>, value: f64) -> Result<Self> {
        Self::new(name, vec![(0.0, value)])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Step-function lookup at `offset` seconds, wrapping past the end.
    pub fn value_at(&self, offset: f64) -> f64 {
        let x = offset.rem_euclid(self.period);
        match self.offsets.partition_point(|t| *t <= x) {
            0 => self.values[0],
            i => self.values[i - 1],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.offsets.iter().copied().zip(self.values.iter().copied())
    }

    /// CSV with an `offset_seconds,utilization_percent` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset_seconds,utilization_percent\n");
        for (t, u) in self.points() {
            out.push_str(&format!("{t},{}\n", u * 100.0));
        }
        out
    }
}

#[derive(Deserialize)]
struct TraceRow {
    offset_seconds: f64,
    utilization_percent: f64,
}

/// Parse a trace CSV (`offset_seconds,utilization_percent`, percent in 0-100).
pub fn parse_trace_csv(name: &str, text: &str) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse("trace csv", e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["offset_seconds", "utilization_percent"] {
        return Err(Error::parse(
            "trace csv",
            "header must be `offset_seconds,utilization_percent`",
        ));
    }
    let mut points = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| Error::parse("trace csv", format!("row {}: {e}", i + 1)))?;
        points.push((row.offset_seconds, row.utilization_percent / 100.0));
    }
    Trace::new(name, points)
}

/// Seconds between samples in a daily trace (288 samples cover 24 hours).
pub const DAILY_SAMPLE_SECONDS: f64 = 300.0;

/// Import a daily trace: one integer utilization percentage per line,
/// sampled every five minutes. Blank lines are ignored.
pub fn parse_daily_trace(name: &str, text: &str) -> Result<Trace> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let pct: u32 = line
            .parse()
            .map_err(|e| Error::parse("daily trace", format!("line {}: {e}", lineno + 1)))?;
        if pct > 100 {
            return Err(Error::parse(
                "daily trace",
                format!("line {}: {pct}% exceeds 100", lineno + 1),
            ));
        }
        points.push((points.len() as f64 * DAILY_SAMPLE_SECONDS, f64::from(pct) / 100.0));
    }
    Trace::new(name, points)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceStore {
    traces: Vec<Trace>,
}

impl TraceStore {
    pub fn new(traces: Vec<Trace>) -> Self {
        Self { traces }
    }

    /// Load every trace in `dir`, sorted by file name. `.csv` files use the
    /// CSV format; any other non-hidden file is read as a daily trace.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter(|p| !p.file_name().and_then(|n| n.to_str()).unwrap_or(".").starts_with('.'))
            .collect();
        entries.sort();
        let mut traces = Vec::with_capacity(entries.len());
        for path in entries {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
            let trace = if path.extension().is_some_and(|e| e == "csv") {
                parse_trace_csv(name, &text)
            } else {
                parse_daily_trace(name, &text)
            }
            .map_err(|e| match e {
                Error::Parse { what, reason } => Error::Parse {
                    what: format!("{what} {}", path.display()),
                    reason,
                },
                other => other,
            })?;
            traces.push(trace);
        }
        if traces.is_empty() {
            return Err(Error::config("traces", format!("no traces found in {}", dir.display())));
        }
        Ok(Self { traces })
    }

    /// Deterministic synthetic day-long traces: a mean-reverting random walk
    /// around a per-trace level, sampled every five minutes.
    pub fn synthetic(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traces = (0..count)
            .map(|i| {
                let level: f64 = rng.random_range(0.15..0.85);
                let mut u = level;
                let points = (0..288)
                    .map(|k| {
                        let shock: f64 = rng.random_range(-0.08..0.08);
                        u = (u + 0.2 * (level - u) + shock).clamp(0.0, 1.0);
                        // Whole percents, like exported monitoring data.
                        (k as f64 * DAILY_SAMPLE_SECONDS, (u * 100.0).round() / 100.0)
                    })
                    .collect();
                Trace::new(format!("synthetic-{i:03}"), points).expect("valid synthetic trace")
            })
            .collect();
        Self { traces }
    }

    pub fn get(&self, id: usize) -> Option<&Trace> {
        self.traces.get(id)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trace> {
        self.traces.iter()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in &self.traces {
            let path = dir.join(format!("{}.csv", t.name()));
            fs::write(&path, t.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// One user's request: all of its VMs arrive together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub time: f64,
    pub user: UserId,
    pub malicious: bool,
    pub vms: Vec<VmRequest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub events: Vec<ArrivalEvent>,
}

impl Scenario {
    pub fn vm_count(&self) -> usize {
        self.events.iter().map(|e| e.vms.len()).sum()
    }

    pub fn user_count(&self) -> usize {
        self.events.len()
    }
}

/// Generate the arrival stream for `config`. Every user consumes the same
/// number of draws regardless of `p_malicious`, so sweeping the malicious
/// fraction never shifts arrival times or trace bindings.
pub fn generate_scenario(config: &ScenarioConfig, traces: &TraceStore) -> Result<Scenario> {
    config.validate()?;
    if traces.is_empty() {
        return Err(Error::config("traces", "trace store is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut next_vm = 0u32;
    loop {
        let r: f64 = rng.sample(Open01);
        t += if config.literal_interarrival {
            literal_interarrival_from_uniform(r, config.lambda_rate)
        } else {
            interarrival_from_uniform(r, config.lambda_rate)
        };
        if t > config.duration {
            break;
        }
        let user = UserId(events.len() as u32);
        let malicious = rng.random::<f64>() < config.p_malicious;
        let count = config.vms_per_user.sample(&mut rng);
        let vms = (0..count)
            .map(|_| {
                let trace_id = rng.random_range(0..traces.len());
                let period = traces.get(trace_id).expect("in range").period();
                let phase = rng.random::<f64>() * period;
                let t_ = &config.vm;
                let vm = VmRequest {
                    id: VmId(next_vm),
                    owner: user,
                    mips_per_pe: t_.mips_per_pe,
                    pe_count: t_.pe_count,
                    mem_mb: t_.mem_mb,
                    bandwidth_mbps: t_.bandwidth_mbps,
                    image_size_gb: t_.image_size_gb,
                    arrival_time: t,
                    trace_id,
                    trace_phase: phase,
                    lifetime: config.vm_lifetime,
                    malicious,
                };
                next_vm += 1;
                vm
            })
            .collect();
        events.push(ArrivalEvent {
            time: t,
            user,
            malicious,
            vms,
        });
        // The literal formula can stall at zero forever for tiny lambda.
        if events.len() > 10_000_000 {
            return Err(Error::config("lambda_rate", "arrival stream does not terminate"));
        }
    }
    Ok(Scenario {
        config: config.clone(),
        events,
    })
}

/// Number of windows needed to cover `duration` and every event.
pub fn window_count(events: &[ArrivalEvent], window_length: f64, duration: f64) -> usize {
    let by_duration = (duration / window_length).ceil() as usize;
    let by_events = events
        .last()
        .map_or(0, |e| (e.time / window_length).floor() as usize + 1);
    by_duration.max(by_events)
}

/// Group VMs into half-open windows `[k L, (k+1) L)`, emitting empty windows too.
pub fn window_batches(
    events: &[ArrivalEvent],
    window_length: f64,
    duration: f64,
) -> Vec<(usize, Vec<VmRequest>)> {
    let n = window_count(events, window_length, duration);
    let mut batches: Vec<(usize, Vec<VmRequest>)> = (0..n).map(|k| (k, Vec::new())).collect();
    for event in events {
        let k = (event.time / window_length).floor() as usize;
        batches[k].1.extend(event.vms.iter().cloned());
    }
    batches
}

/// Utilization of `vm` at absolute `time`, read from its bound trace.
pub fn utilization_at(trace: &Trace, vm: &VmRequest, time: f64) -> f64 {
    trace.value_at(time - vm.arrival_time + vm.trace_phase)
}
