//! Comparison policies: round robin (RR-k) and previously-selected-servers-first
//! (PSSF-k). Both grow the PM pool in groups of `k` once nothing has room.

use serde::{Deserialize, Serialize};

use crate::aco::BatchVm;
use crate::error::{Error, Result};
use crate::model::{fits_demand, AllocationState, PmId};

/// PMs a baseline policy has powered on, in spawn order, plus the
/// round-robin cursor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedPool {
    k: usize,
    pms: Vec<PmId>,
    cursor: usize,
}

impl GroupedPool {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k", "group size must be >= 1"));
        }
        Ok(Self { k, pms: Vec::new(), cursor: 0 })
    }

    pub fn group_size(&self) -> usize {
        self.k
    }

    pub fn pms(&self) -> &[PmId] {
        &self.pms
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Take over PMs the state uses but the pool has not seen, e.g. targets
    /// of overload migrations.
    pub fn adopt(&mut self, state: &AllocationState) {
        for pm in state.active_pms() {
            if !self.pms.contains(&pm) {
                self.pms.push(pm);
            }
        }
    }

    /// Power on `k` new PMs; returns the index of the first one.
    fn spawn(&mut self, state: &mut AllocationState) -> usize {
        let first = self.pms.len();
        for _ in 0..self.k {
            self.pms.push(state.fresh_pm());
        }
        first
    }

    fn place_new_group(&mut self, state: &mut AllocationState, vm: &BatchVm) -> Result<usize> {
        let idx = self.spawn(state);
        let pm = self.pms[idx];
        if !fits_demand(state, pm, state.host(), vm.demand) {
            return Err(Error::Infeasible { pm, demand: vm.demand });
        }
        state.place(vm.id, vm.owner, vm.demand, pm)?;
        Ok(idx)
    }
}

/// Round robin: each VM goes to the next pool PM in circular order, skipping
/// PMs without room. Returns the PM chosen for each VM.
pub fn rr_allocate(pool: &mut GroupedPool, state: &mut AllocationState, batch: &[BatchVm]) -> Result<Vec<PmId>> {
    pool.adopt(state);
    let mut chosen = Vec::with_capacity(batch.len());
    for vm in batch {
        let n = pool.pms.len();
        let hit = (0..n)
            .map(|step| (pool.cursor + step) % n)
            .find(|&i| fits_demand(state, pool.pms[i], state.host(), vm.demand));
        let idx = match hit {
            Some(i) => {
                state.place(vm.id, vm.owner, vm.demand, pool.pms[i])?;
                i
            }
            None => pool.place_new_group(state, vm)?,
        };
        pool.cursor = (idx + 1) % pool.pms.len();
        chosen.push(pool.pms[idx]);
    }
    Ok(chosen)
}

/// PSSF: stack a VM with its owner's earlier VMs when possible (owner PM with
/// the most free capacity, then lowest id); otherwise spread to the
/// least-loaded pool PM with room (lowest id on ties); otherwise spawn.
pub fn pssf_allocate(pool: &mut GroupedPool, state: &mut AllocationState, batch: &[BatchVm]) -> Result<Vec<PmId>> {
    pool.adopt(state);
    let mut chosen = Vec::with_capacity(batch.len());
    for vm in batch {
        let fits = |s: &AllocationState, pm: PmId| fits_demand(s, pm, s.host(), vm.demand);
        let by_load = |a: &PmId, b: &PmId| {
            state.pm_load(*a).total_cmp(&state.pm_load(*b)).then(a.cmp(b))
        };
        let stacked = pool
            .pms
            .iter()
            .copied()
            .filter(|pm| state.pm_hosts_user(*pm, vm.owner) && fits(state, *pm))
            .min_by(by_load);
        let target = stacked.or_else(|| pool.pms.iter().copied().filter(|pm| fits(state, *pm)).min_by(by_load));
        match target {
            Some(pm) => {
                state.place(vm.id, vm.owner, vm.demand, pm)?;
                chosen.push(pm);
            }
            None => {
                let idx = pool.place_new_group(state, vm)?;
                chosen.push(pool.pms[idx]);
            }
        }
    }
    Ok(chosen)
}
