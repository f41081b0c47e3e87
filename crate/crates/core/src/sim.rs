//! Trace-driven simulation loop.
//!
//! Time advances over the union of metric ticks and window ends. At each
//! instant the loop retires expired VMs, refreshes demands from traces,
//! resolves overloads by migration, allocates the window's batch when a
//! window closes, and records one metrics row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aco::{self, AcoParams, BatchVm};
use crate::baseline::{pssf_allocate, rr_allocate, GroupedPool};
use crate::cost::{recompute, CostBreakdown, CostModel};
use crate::error::{Error, Result};
use crate::model::{fits_demand, vm_demand, AllocationState, HostModel, PmId, VmId, VmRequest};
use crate::rng::derive_seed;
use crate::workload::{utilization_at, window_batches, Scenario, TraceStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Aco(AcoParams),
    RoundRobin { k: usize },
    Pssf { k: usize },
}

impl Policy {
    /// Short label: `aco`, `rr4`, `pssf6`.
    pub fn label(&self) -> String {
        match self {
            Policy::Aco(_) => "aco".into(),
            Policy::RoundRobin { k } => format!("rr{k}"),
            Policy::Pssf { k } => format!("pssf{k}"),
        }
    }

    /// Parse a label produced by [`label`](Self::label); ACO gets `aco_params`.
    pub fn from_label(label: &str, aco_params: &AcoParams) -> Result<Self> {
        let bad = || Error::config("policy", format!("unknown policy `{label}`"));
        if label == "aco" {
            return Ok(Policy::Aco(aco_params.clone()));
        }
        let (kind, k) = if let Some(k) = label.strip_prefix("pssf") {
            ("pssf", k)
        } else if let Some(k) = label.strip_prefix("rr") {
            ("rr", k)
        } else {
            return Err(bad());
        };
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(Error::config("k", "group size must be >= 1"));
        }
        Ok(if kind == "rr" { Policy::RoundRobin { k } } else { Policy::Pssf { k } })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Metric sampling interval in seconds.
    pub tick: f64,
    /// Seed for the allocator's stream; each window derives its own.
    pub aco_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub time: f64,
    pub security: f64,
    pub power: f64,
    pub imbalance: f64,
    pub total: f64,
    pub occupied_pms: usize,
    pub migrations_cum: usize,
    pub vms_active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MigrationEvent {
    pub time: f64,
    pub vm: VmId,
    pub from_pm: PmId,
    pub to_pm: PmId,
    pub migration_seconds: f64,
}

/// Outcome of one window's allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowRecord {
    pub window: usize,
    pub time: f64,
    pub batch_size: usize,
    /// Server count chosen by ACO, or occupied PMs after a baseline.
    pub n_s: usize,
    pub occupied_after: usize,
    pub total: f64,
}

/// Best-so-far cost per ACO iteration, for convergence plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub window: usize,
    pub n_s: usize,
    pub iteration: usize,
    pub best_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    /// Time average of the total cost over rows with at least one VM.
    pub mean_total: f64,
    pub mean_security: f64,
    pub mean_power: f64,
    pub mean_imbalance: f64,
    pub final_cost: CostBreakdown,
    pub final_occupied_pms: usize,
    pub vms_placed: usize,
    pub migrations: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: Vec<MetricsRecord>,
    pub migrations: Vec<MigrationEvent>,
    pub windows: Vec<WindowRecord>,
    pub convergence: Vec<ConvergenceRow>,
    pub final_state: AllocationState,
    /// Largest gap between maintained and from-scratch total cost.
    pub max_conservation_error: f64,
    /// Largest load / capacity seen right after an overload pass.
    pub max_load_ratio_after_overload: f64,
    pub summary: RunSummary,
}

/// Move VMs off overloaded PMs until none remains. The victim is the
/// smallest positive-demand VM on the most overloaded PM; the target is the
/// feasible occupied PM with the lowest incremental cost, or a fresh PM.
pub fn handle_overload(
    state: &mut AllocationState,
    model: &CostModel,
    vms: &BTreeMap<VmId, VmRequest>,
    time: f64,
) -> Result<Vec<MigrationEvent>> {
    let mut events = Vec::new();
    let cap = state.host().capacity_mips();
    loop {
        let worst = state
            .overloaded_pms()
            .max_by(|a, b| state.pm_load(*a).total_cmp(&state.pm_load(*b)).then(b.cmp(a)));
        let Some(source) = worst else { break };
        let victim = state
            .pm_vms(source)
            .iter()
            .map(|v| (*v, state.placement(*v).expect("listed vm").demand))
            .filter(|(_, d)| *d > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((vm, demand)) = victim else {
            return Err(Error::InvalidArgument(format!("pm {source} overloaded without positive demand")));
        };
        if demand > cap {
            return Err(Error::Infeasible { pm: source, demand });
        }
        let placed = state.remove(vm)?;
        let mut best: Option<(f64, PmId)> = None;
        for pm in state.active_pms().filter(|pm| *pm != source) {
            if !fits_demand(state, pm, state.host(), demand) {
                continue;
            }
            let c = model.incremental(state, placed.owner, demand, pm)?;
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, pm));
            }
        }
        let target = match best {
            Some((_, pm)) => pm,
            None => state.fresh_pm(),
        };
        state.place(vm, placed.owner, demand, target)?;
        let request = vms.get(&vm).ok_or(Error::UnknownVm(vm))?;
        events.push(MigrationEvent {
            time,
            vm,
            from_pm: source,
            to_pm: target,
            migration_seconds: request.migration_seconds(),
        });
    }
    Ok(events)
}

/// Remove a departing VM and drop PMs left empty from the occupied list.
pub fn vm_departure(state: &mut AllocationState, vm: VmId) -> Result<()> {
    state.remove(vm)?;
    state.reclaim();
    Ok(())
}

fn event_times(n_windows: usize, window_length: f64, tick: f64) -> Vec<f64> {
    let end = n_windows as f64 * window_length;
    let mut times: Vec<f64> = (0..)
        .map(|i| i as f64 * tick)
        .take_while(|t| *t <= end + 1e-9)
        .collect();
    times.extend((1..=n_windows).map(|k| k as f64 * window_length));
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    times
}

struct Allocator {
    policy: Policy,
    pool: Option<GroupedPool>,
    aco_seed: u64,
}

impl Allocator {
    fn new(policy: &Policy, aco_seed: u64) -> Result<Self> {
        let pool = match policy {
            Policy::Aco(p) => {
                p.validate()?;
                None
            }
            Policy::RoundRobin { k } | Policy::Pssf { k } => Some(GroupedPool::new(*k)?),
        };
        Ok(Self { policy: policy.clone(), pool, aco_seed })
    }

    fn allocate(
        &mut self,
        window: usize,
        state: &mut AllocationState,
        batch: &[BatchVm],
        model: &CostModel,
        convergence: &mut Vec<ConvergenceRow>,
    ) -> Result<usize> {
        let wrap = |e: Error| Error::Allocation { window, reason: e.to_string() };
        match &self.policy {
            Policy::Aco(params) => {
                let params = AcoParams {
                    seed: derive_seed(self.aco_seed, window as u64),
                    ..params.clone()
                };
                let solution = aco::solve(state, batch, model, &params).map_err(wrap)?;
                for sp in &solution.subproblems {
                    for (i, c) in sp.trajectory.iter().enumerate().filter(|(_, c)| c.is_finite()) {
                        convergence.push(ConvergenceRow { window, n_s: sp.n_s, iteration: i + 1, best_cost: *c });
                    }
                }
                aco::apply_in_place(state, batch, &solution.assignment).map_err(wrap)?;
                Ok(solution.n_s)
            }
            Policy::RoundRobin { .. } => {
                rr_allocate(self.pool.as_mut().expect("pool"), state, batch).map_err(wrap)?;
                Ok(state.active_pm_count())
            }
            Policy::Pssf { .. } => {
                pssf_allocate(self.pool.as_mut().expect("pool"), state, batch).map_err(wrap)?;
                Ok(state.active_pm_count())
            }
        }
    }
}

pub fn run(
    scenario: &Scenario,
    traces: &TraceStore,
    host: &HostModel,
    model: &CostModel,
    policy: &Policy,
    options: &SimOptions,
) -> Result<SimOutput> {
    let cfg = &scenario.config;
    if !(options.tick.is_finite() && options.tick > 0.0) {
        return Err(Error::config("tick", "must be > 0"));
    }
    for vm in scenario.events.iter().flat_map(|e| &e.vms) {
        if traces.get(vm.trace_id).is_none() {
            return Err(Error::config("traces", format!("vm {} is bound to missing trace {}", vm.id, vm.trace_id)));
        }
        if vm.peak_mips() > host.capacity_mips() {
            return Err(Error::config(
                "vm",
                format!("peak demand {} exceeds host capacity {}", vm.peak_mips(), host.capacity_mips()),
            ));
        }
    }

    let batches = window_batches(&scenario.events, cfg.window_length, cfg.duration);
    let times = event_times(batches.len(), cfg.window_length, options.tick);
    let mut allocator = Allocator::new(policy, options.aco_seed)?;

    let mut state = AllocationState::new(host.clone());
    let mut live: BTreeMap<VmId, VmRequest> = BTreeMap::new();
    let mut metrics = Vec::with_capacity(times.len());
    let mut migrations = Vec::new();
    let mut windows = Vec::new();
    let mut convergence = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    let mut next_window = 0;

    let demand_at = |vm: &VmRequest, t: f64| vm_demand(vm, utilization_at(traces.get(vm.trace_id).expect("checked"), vm, t));
    let departs = |vm: &VmRequest| vm.lifetime.map(|l| vm.arrival_time + l);

    for &now in &times {
        let expired: Vec<VmId> = live
            .values()
            .filter(|vm| departs(vm).is_some_and(|d| d <= now))
            .map(|vm| vm.id)
            .collect();
        for id in expired {
            vm_departure(&mut state, id)?;
            live.remove(&id);
        }
        for vm in live.values() {
            state.set_demand(vm.id, demand_at(vm, now))?;
        }
        migrations.extend(handle_overload(&mut state, model, &live, now)?);
        max_ratio = max_ratio.max(max_load_ratio(&state));

        while next_window < batches.len() && (batches[next_window].0 + 1) as f64 * cfg.window_length <= now + 1e-9 {
            let (window, requests) = &batches[next_window];
            next_window += 1;
            let requests: Vec<&VmRequest> = requests.iter().filter(|vm| departs(vm).is_none_or(|d| d > now)).collect();
            if requests.is_empty() {
                continue;
            }
            let batch: Vec<BatchVm> = requests
                .iter()
                .map(|vm| BatchVm { id: vm.id, owner: vm.owner, demand: demand_at(vm, now) })
                .collect();
            let n_s = allocator.allocate(*window, &mut state, &batch, model, &mut convergence)?;
            for vm in requests {
                live.insert(vm.id, vm.clone());
            }
            windows.push(WindowRecord {
                window: *window,
                time: now,
                batch_size: batch.len(),
                n_s,
                occupied_after: state.active_pm_count(),
                total: model.evaluate(&state).total,
            });
            max_ratio = max_ratio.max(max_load_ratio(&state));
        }

        let cost = model.evaluate(&state);
        max_err = max_err.max((cost.total - recompute(&state, model).total).abs());
        metrics.push(MetricsRecord {
            time: now,
            security: cost.security,
            power: cost.power,
            imbalance: cost.imbalance,
            total: cost.total,
            occupied_pms: state.active_pm_count(),
            migrations_cum: migrations.len(),
            vms_active: state.vm_count(),
        });
    }

    let summary = summarize(&metrics, &state, model, scenario.vm_count(), migrations.len());
    Ok(SimOutput {
        metrics,
        migrations,
        windows,
        convergence,
        final_state: state,
        max_conservation_error: max_err,
        max_load_ratio_after_overload: max_ratio,
        summary,
    })
}

fn max_load_ratio(state: &AllocationState) -> f64 {
    let cap = state.host().capacity_mips();
    state.active_pms().map(|pm| state.pm_load(pm) / cap).fold(0.0, f64::max)
}

fn summarize(metrics: &[MetricsRecord], state: &AllocationState, model: &CostModel, vms: usize, migrations: usize) -> RunSummary {
    // Each row stands for the interval up to the next row.
    let mut acc = [0.0; 4];
    let mut span = 0.0;
    for pair in metrics.windows(2) {
        let (row, dt) = (&pair[0], pair[1].time - pair[0].time);
        if row.vms_active == 0 || dt <= 0.0 {
            continue;
        }
        span += dt;
        for (a, v) in acc.iter_mut().zip([row.total, row.security, row.power, row.imbalance]) {
            *a += v * dt;
        }
    }
    // A run whose VMs only appear at the final instant still has a cost.
    if span == 0.0 {
        if let Some(last) = metrics.last().filter(|r| r.vms_active > 0) {
            acc = [last.total, last.security, last.power, last.imbalance];
            span = 1.0;
        }
    }
    let mean = |i: usize| if span > 0.0 { acc[i] / span } else { 0.0 };
    RunSummary {
        mean_total: mean(0),
        mean_security: mean(1),
        mean_power: mean(2),
        mean_imbalance: mean(3),
        final_cost: model.evaluate(state),
        final_occupied_pms: state.active_pm_count(),
        vms_placed: vms,
        migrations,
    }
}
