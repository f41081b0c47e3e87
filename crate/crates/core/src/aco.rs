//! Ant colony search over VM-to-PM assignments for one time window.
//!
//! The window's batch is solved once per candidate server count `n_s`. A
//! subproblem's candidate pool is every PM that already hosts VMs (in
//! first-use order) followed by `n_s - active` fresh PMs. Ants build complete
//! assignments one VM at a time, sampling a PM with probability proportional
//! to `pheromone^alpha * heuristic^beta`, where the heuristic is the inverse
//! of the (shifted) marginal cost of the placement. The cheapest result
//! across all server counts wins, ties going to the smaller count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{recompute, CostBreakdown, CostModel};
use crate::error::{Error, Result};
use crate::model::{fits_demand, AllocationState, PmId, UserId, VmId};
use crate::rng::derive_seed;

/// Shift added to marginal costs before inverting them.
pub const DEFAULT_ETA_EPSILON: f64 = 1e-3;

/// Cost improvements smaller than this do not displace an earlier optimum.
const COST_TIE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoParams {
    /// Pheromone exponent.
    pub alpha: f64,
    /// Heuristic exponent.
    pub beta: f64,
    /// Pheromone update rate.
    pub phi: f64,
    pub n_ants: usize,
    pub n_iterations: usize,
    pub seed: u64,
    /// Decay every pheromone entry on update, not only the reinforced ones.
    pub evaporate_all: bool,
    pub eta_epsilon: f64,
    /// Upper bound on the candidate pool size (provisioned PMs).
    pub max_servers: Option<usize>,
}

impl Default for AcoParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.89,
            phi: 0.8,
            n_ants: 20,
            n_iterations: 50,
            seed: 0,
            evaporate_all: false,
            eta_epsilon: DEFAULT_ETA_EPSILON,
            max_servers: None,
        }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("phi", self.phi)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is outside [0, 1]")));
            }
        }
        if self.n_ants < 1 {
            return Err(Error::config("ants", "must be >= 1"));
        }
        if self.n_iterations < 1 {
            return Err(Error::config("iters", "must be >= 1"));
        }
        if !(self.eta_epsilon.is_finite() && self.eta_epsilon > 0.0) {
            return Err(Error::config("eta_epsilon", "must be > 0"));
        }
        if self.max_servers == Some(0) {
            return Err(Error::config("max_servers", "must be >= 1"));
        }
        Ok(())
    }
}

/// A VM waiting for placement, with its demand fixed at decision time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchVm {
    pub id: VmId,
    pub owner: UserId,
    pub demand: f64,
}

/// Candidate PM slots, indexed by batch position. Slot values index the
/// subproblem's candidate pool, not raw PM ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub slots: Vec<usize>,
}

impl Assignment {
    /// Relabel fresh candidates (index >= `active`) in order of first use.
    /// Fresh PMs are interchangeable, so this never changes the cost.
    fn canonicalize(&mut self, active: usize) {
        let mut relabel: Vec<(usize, usize)> = Vec::new();
        for slot in &mut self.slots {
            if *slot < active {
                continue;
            }
            let next = active + relabel.len();
            *slot = match relabel.iter().find(|(from, _)| *from == *slot) {
                Some((_, to)) => *to,
                None => {
                    relabel.push((*slot, next));
                    next
                }
            };
        }
    }

    pub fn servers_used(&self) -> usize {
        let mut s = self.slots.clone();
        s.sort_unstable();
        s.dedup();
        s.len()
    }
}

/// Map candidate index `idx` to a PM id for `base`.
fn candidate_pm(active: &[PmId], next: PmId, idx: usize) -> PmId {
    if idx < active.len() {
        active[idx]
    } else {
        PmId(next.0 + (idx - active.len()) as u32)
    }
}

/// Place `batch` on `state` following `assignment`. Fails without partial
/// effects on the caller's view only if used through [`apply`].
pub fn apply_in_place(state: &mut AllocationState, batch: &[BatchVm], assignment: &Assignment) -> Result<Vec<(VmId, PmId)>> {
    if assignment.slots.len() != batch.len() {
        return Err(Error::InvalidArgument(format!(
            "assignment has {} slots for {} vms",
            assignment.slots.len(),
            batch.len()
        )));
    }
    let active: Vec<PmId> = state.active_pms().collect();
    let next = state.next_pm_id();
    let mut placed = Vec::with_capacity(batch.len());
    for (vm, slot) in batch.iter().zip(&assignment.slots) {
        let pm = candidate_pm(&active, next, *slot);
        if !fits_demand(state, pm, state.host(), vm.demand) {
            return Err(Error::Infeasible { pm, demand: vm.demand });
        }
        state.place(vm.id, vm.owner, vm.demand, pm)?;
        placed.push((vm.id, pm));
    }
    Ok(placed)
}

pub fn apply(base: &AllocationState, batch: &[BatchVm], assignment: &Assignment) -> Result<AllocationState> {
    let mut s = base.clone();
    apply_in_place(&mut s, batch, assignment)?;
    Ok(s)
}

/// Inclusive range of server counts worth searching for `batch` on top of `base`.
pub fn server_count_range(base: &AllocationState, batch: &[BatchVm], max_servers: Option<usize>) -> Result<(usize, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let active = base.active_pm_count();
    let demand = base.total_load() + batch.iter().map(|v| v.demand).sum::<f64>();
    let by_capacity = (demand / base.host().capacity_mips() - 1e-9).ceil().max(1.0) as usize;
    let n_min = active.max(by_capacity);
    let mut n_max = active + batch.len();
    if let Some(cap) = max_servers {
        n_max = n_max.min(cap);
    }
    if n_min > n_max {
        return Err(Error::config(
            "max_servers",
            format!("batch needs at least {n_min} PMs but only {n_max} can be used"),
        ));
    }
    Ok((n_min, n_max))
}

/// Heuristic desirability of each feasible candidate: `1 / (c - min c + eps)`.
/// Infeasible entries are zero.
pub fn heuristic_row(costs: &[f64], feasible: &[bool], eps: f64) -> Vec<f64> {
    let min = costs
        .iter()
        .zip(feasible)
        .filter(|(_, f)| **f)
        .map(|(c, _)| *c)
        .fold(f64::INFINITY, f64::min);
    costs
        .iter()
        .zip(feasible)
        .map(|(c, f)| if *f { 1.0 / (c - min + eps) } else { 0.0 })
        .collect()
}

/// Normalized `ph^alpha * eta^beta` over feasible candidates. `None` when
/// nothing is feasible. A row whose weights all vanish falls back to uniform.
pub fn probabilities_from_heuristic(ph_row: &[f64], eta_row: &[f64], feasible: &[bool], alpha: f64, beta: f64) -> Option<Vec<f64>> {
    if !feasible.iter().any(|f| *f) {
        return None;
    }
    let mut w: Vec<f64> = ph_row
        .iter()
        .zip(eta_row)
        .zip(feasible)
        .map(|((ph, eta), f)| if *f { ph.powf(alpha) * eta.powf(beta) } else { 0.0 })
        .collect();
    normalize(&mut w, feasible);
    Some(w)
}

pub fn selection_probabilities(
    ph_row: &[f64],
    cost_row: &[f64],
    feasible: &[bool],
    alpha: f64,
    beta: f64,
    eps: f64,
) -> Option<Vec<f64>> {
    let eta = heuristic_row(cost_row, feasible, eps);
    probabilities_from_heuristic(ph_row, &eta, feasible, alpha, beta)
}

fn normalize(w: &mut [f64], feasible: &[bool]) {
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        let n = feasible.iter().filter(|f| **f).count() as f64;
        for (x, f) in w.iter_mut().zip(feasible) {
            *x = if *f { 1.0 / n } else { 0.0 };
        }
    }
}

/// Draw an index from unnormalized weights (restricted to feasible entries).
fn sample_index(weights: &[f64], feasible: &[bool], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        let options: Vec<usize> = (0..feasible.len()).filter(|j| feasible[*j]).collect();
        return options[rng.random_range(0..options.len())];
    }
    let r = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, w) in weights.iter().enumerate() {
        if !feasible[j] {
            continue;
        }
        acc += w;
        last = j;
        if r < acc {
            return j;
        }
    }
    last
}

/// Pheromone per (batch position, candidate PM), initialized to `1 / n_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PheromoneMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl PheromoneMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![1.0 / cols as f64; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Reinforce the pairs of `best` toward `1 / c_opt` at rate `phi`.
    /// With `evaporate_all`, every other entry decays by `1 - phi` as well.
    pub fn update(&mut self, best: &Assignment, c_opt: f64, phi: f64, evaporate_all: bool, eps: f64) {
        let deposit = 1.0 / c_opt.max(eps);
        if evaporate_all {
            self.values.iter_mut().for_each(|v| *v *= 1.0 - phi);
            for (row, col) in best.slots.iter().enumerate() {
                self.values[row * self.cols + col] += phi * deposit;
            }
        } else {
            for (row, col) in best.slots.iter().enumerate() {
                let v = &mut self.values[row * self.cols + col];
                *v = (1.0 - phi) * *v + phi * deposit;
            }
        }
    }

    fn powered(&self, alpha: f64) -> Vec<f64> {
        self.values.iter().map(|v| v.powf(alpha)).collect()
    }
}

/// One ant's finished assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub assignment: Assignment,
    /// Total cost of the base state plus this assignment.
    pub total: f64,
    /// `total` minus the base state's cost (sum of the marginal costs paid).
    pub delta: f64,
}

/// RNG used by [`solve_subproblem`] for server count `n_s`.
pub fn subproblem_rng(seed: u64, n_s: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, n_s as u64))
}

/// Build one assignment of `batch` onto `n_s` candidate PMs. Returns `None`
/// if some VM finds no PM with room (a dead end).
pub fn construct_assignment(
    base: &AllocationState,
    batch: &[BatchVm],
    n_s: usize,
    pheromone: &PheromoneMatrix,
    model: &CostModel,
    params: &AcoParams,
    rng: &mut impl Rng,
) -> Option<Construction> {
    let ph_alpha = pheromone.powered(params.alpha);
    construct_with(base, batch, n_s, &ph_alpha, model, params, rng)
}

fn construct_with(
    base: &AllocationState,
    batch: &[BatchVm],
    n_s: usize,
    ph_alpha: &[f64],
    model: &CostModel,
    params: &AcoParams,
    rng: &mut impl Rng,
) -> Option<Construction> {
    let active: Vec<PmId> = base.active_pms().collect();
    assert!(n_s >= active.len(), "pool must include every active PM");
    let next = base.next_pm_id();
    let pool: Vec<PmId> = (0..n_s).map(|j| candidate_pm(&active, next, j)).collect();
    let host = base.host();

    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(rng);

    let base_total = model.evaluate(base).total;
    let mut work = base.clone();
    let mut slots = vec![0usize; batch.len()];
    let mut costs = vec![0.0; n_s];
    let mut feasible = vec![false; n_s];
    let mut weights = vec![0.0; n_s];

    for &nu in &order {
        let vm = batch[nu];
        let owner_new = work.user_vm_count(vm.owner) == 0;
        let current = model.evaluate(&work).total;
        // Every empty PM prices identically; compute that once per row.
        let mut empty_cost: Option<f64> = None;
        for (j, pm) in pool.iter().enumerate() {
            feasible[j] = fits_demand(&work, *pm, host, vm.demand);
            if !feasible[j] {
                continue;
            }
            costs[j] = if work.pm_vms(*pm).is_empty() {
                *empty_cost.get_or_insert_with(|| model.total_after(&work, vm.owner, owner_new, vm.demand, *pm) - current)
            } else {
                model.total_after(&work, vm.owner, owner_new, vm.demand, *pm) - current
            };
        }
        if !feasible.iter().any(|f| *f) {
            return None;
        }
        let eta = heuristic_row(&costs, &feasible, params.eta_epsilon);
        let row = &ph_alpha[nu * n_s..(nu + 1) * n_s];
        for j in 0..n_s {
            weights[j] = if feasible[j] { row[j] * eta[j].powf(params.beta) } else { 0.0 };
        }
        let j = sample_index(&weights, &feasible, rng);
        work.place(vm.id, vm.owner, vm.demand, pool[j]).expect("fresh vm id");
        slots[nu] = j;
    }

    let total = model.evaluate(&work).total;
    let mut assignment = Assignment { slots };
    assignment.canonicalize(active.len());
    Some(Construction {
        assignment,
        total,
        delta: total - base_total,
    })
}

/// Best assignment found for one fixed server count.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    pub n_s: usize,
    pub best: Option<Assignment>,
    /// Cost of `best` applied to the base, recomputed from scratch
    /// (infinite when every ant hit a dead end).
    pub cost: f64,
    pub breakdown: Option<CostBreakdown>,
    /// Best cost so far after each iteration.
    pub trajectory: Vec<f64>,
    pub failed_ants: usize,
}

impl SubproblemResult {
    pub fn is_feasible(&self) -> bool {
        self.best.is_some()
    }
}

pub fn solve_subproblem(
    base: &AllocationState,
    batch: &[BatchVm],
    n_s: usize,
    model: &CostModel,
    params: &AcoParams,
) -> SubproblemResult {
    solve_subproblem_observed(base, batch, n_s, model, params, &mut |_, _| {})
}

/// [`solve_subproblem`], calling `observe(iteration, pheromone)` at the end
/// of every iteration.
pub fn solve_subproblem_observed(
    base: &AllocationState,
    batch: &[BatchVm],
    n_s: usize,
    model: &CostModel,
    params: &AcoParams,
    observe: &mut dyn FnMut(usize, &PheromoneMatrix),
) -> SubproblemResult {
    let mut rng = subproblem_rng(params.seed, n_s);
    let mut pheromone = PheromoneMatrix::new(batch.len(), n_s);
    let mut c_opt = f64::INFINITY;
    let mut best: Option<Assignment> = None;
    let mut trajectory = Vec::with_capacity(params.n_iterations);
    let mut failed_ants = 0;

    for iteration in 0..params.n_iterations {
        let ph_alpha = pheromone.powered(params.alpha);
        let mut iteration_best: Option<Construction> = None;
        for _ in 0..params.n_ants {
            match construct_with(base, batch, n_s, &ph_alpha, model, params, &mut rng) {
                Some(c) => {
                    if iteration_best.as_ref().is_none_or(|b| c.total < b.total) {
                        iteration_best = Some(c);
                    }
                }
                None => failed_ants += 1,
            }
        }
        if let Some(ib) = iteration_best {
            if ib.total < c_opt {
                c_opt = ib.total;
                pheromone.update(&ib.assignment, c_opt, params.phi, params.evaporate_all, params.eta_epsilon);
                best = Some(ib.assignment);
            }
        }
        trajectory.push(c_opt);
        observe(iteration, &pheromone);
    }

    let breakdown = best
        .as_ref()
        .map(|a| recompute(&apply(base, batch, a).expect("constructed assignments fit"), model));
    SubproblemResult {
        n_s,
        cost: breakdown.map_or(f64::INFINITY, |b| b.total),
        best,
        breakdown,
        trajectory,
        failed_ants,
    }
}

/// The chosen placement for a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    /// Server count of the winning subproblem.
    pub n_s: usize,
    /// PMs hosting VMs once the assignment is applied.
    pub occupied_after: usize,
    pub cost: CostBreakdown,
    pub subproblems: Vec<SubproblemResult>,
}

/// Search every server count in [`server_count_range`] and keep the cheapest.
pub fn solve(base: &AllocationState, batch: &[BatchVm], model: &CostModel, params: &AcoParams) -> Result<Solution> {
    params.validate()?;
    let (n_min, n_max) = server_count_range(base, batch, params.max_servers)?;
    let subproblems: Vec<SubproblemResult> = (n_min..=n_max)
        .map(|n_s| solve_subproblem(base, batch, n_s, model, params))
        .collect();

    let mut winner: Option<&SubproblemResult> = None;
    for sp in subproblems.iter().filter(|s| s.is_feasible()) {
        if winner.is_none_or(|w| sp.cost < w.cost - COST_TIE) {
            winner = Some(sp);
        }
    }
    let winner = winner.ok_or(Error::NoFeasibleAssignment(batch.len()))?;
    let assignment = winner.best.clone().expect("feasible");
    let after = apply(base, batch, &assignment)?;
    Ok(Solution {
        n_s: winner.n_s,
        occupied_after: after.active_pm_count(),
        cost: winner.breakdown.expect("feasible"),
        assignment,
        subproblems,
    })
}
