//! Domain types shared by every allocator: identifiers, VM requests, host power
//! curves and the mutable allocation state with its capacity bookkeeping.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};

/// Slack (in MIPS) absorbed by capacity comparisons. Loads are sums of
/// floating point demands, so an exact fit may land a few ULPs above capacity.
pub const CAPACITY_SLACK_MIPS: f64 = 1e-6;

/// Default PM capacity: 8 logical PEs at 2000 MIPS.
pub const DEFAULT_CAPACITY_MIPS: f64 = 16_000.0;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(UserId);
id_type!(
    /// Never reused within a scenario.
    VmId
);
id_type!(
    /// Physical machine id. Allocated densely from zero and never reused.
    PmId
);

/// One VM's resource shape. Defaults follow the standard VM
/// configuration used throughout the experiments (2 x 2000 MIPS, 1 GiB,
/// 100 Mbit/s, 2.5 GB image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmRequest {
    pub id: VmId,
    pub owner: UserId,
    pub mips_per_pe: f64,
    pub pe_count: u32,
    pub mem_mb: u32,
    pub bandwidth_mbps: f64,
    pub image_size_gb: f64,
    pub arrival_time: f64,
    pub trace_id: usize,
    /// Offset into the bound trace, in seconds.
    pub trace_phase: f64,
    /// `None` means the VM never departs.
    pub lifetime: Option<f64>,
    /// Ground-truth label. Allocators never look at it.
    pub malicious: bool,
}

impl VmRequest {
    pub fn standard(id: VmId, owner: UserId, arrival_time: f64) -> Self {
        let t = VmTemplate::default();
        Self {
            id,
            owner,
            mips_per_pe: t.mips_per_pe,
            pe_count: t.pe_count,
            mem_mb: t.mem_mb,
            bandwidth_mbps: t.bandwidth_mbps,
            image_size_gb: t.image_size_gb,
            arrival_time,
            trace_id: 0,
            trace_phase: 0.0,
            lifetime: None,
            malicious: false,
        }
    }

    pub fn peak_mips(&self) -> f64 {
        self.mips_per_pe * f64::from(self.pe_count)
    }

    /// Seconds needed to move the VM image over its own link (GB are decimal).
    pub fn migration_seconds(&self) -> f64 {
        self.image_size_gb * 8000.0 / self.bandwidth_mbps
    }
}

/// The resource shape stamped onto every generated VM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmTemplate {
    pub mips_per_pe: f64,
    pub pe_count: u32,
    pub mem_mb: u32,
    pub bandwidth_mbps: f64,
    pub image_size_gb: f64,
}

impl Default for VmTemplate {
    fn default() -> Self {
        Self {
            mips_per_pe: 2000.0,
            pe_count: 2,
            mem_mb: 1024,
            bandwidth_mbps: 100.0,
            image_size_gb: 2.5,
        }
    }
}

impl VmTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.mips_per_pe.is_finite() && self.mips_per_pe > 0.0) {
            return Err(Error::config("vm.mips_per_pe", "must be > 0"));
        }
        if self.pe_count < 1 {
            return Err(Error::config("vm.pe_count", "must be >= 1"));
        }
        if !(self.bandwidth_mbps.is_finite() && self.bandwidth_mbps > 0.0) {
            return Err(Error::config("vm.bandwidth_mbps", "must be > 0"));
        }
        if !(self.image_size_gb.is_finite() && self.image_size_gb >= 0.0) {
            return Err(Error::config("vm.image_size_gb", "must be >= 0"));
        }
        Ok(())
    }
}

/// CPU demand of `vm` running at `utilization` (a fraction of its peak).
pub fn vm_demand(vm: &VmRequest, utilization: f64) -> f64 {
    vm.mips_per_pe * f64::from(vm.pe_count) * utilization
}

/// Power draw measured at 0%, 10%, ..., 100% CPU utilization.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PowerCurve([f64; 11]);

impl PowerCurve {
    pub fn new(watts: [f64; 11]) -> Result<Self> {
        for (i, w) in watts.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::config(
                    "watts",
                    format!("entry {i} ({w}) must be finite and > 0"),
                ));
            }
        }
        if let Some(i) = watts.windows(2).position(|p| p[1] < p[0]) {
            return Err(Error::config(
                "watts",
                format!("curve decreases between {}% and {}%", i * 10, (i + 1) * 10),
            ));
        }
        Ok(Self(watts))
    }

    pub fn from_slice(watts: &[f64]) -> Result<Self> {
        let arr: [f64; 11] = watts.try_into().map_err(|_| {
            Error::config("watts", format!("expected 11 entries, got {}", watts.len()))
        })?;
        Self::new(arr)
    }

    pub fn watts(&self) -> &[f64; 11] {
        &self.0
    }
}

impl<'de> Deserialize<'de> for PowerCurve {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        PowerCurve::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// A PM type: its power curve and CPU capacity. One model per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct HostModel {
    name: String,
    curve: PowerCurve,
    capacity_mips: f64,
    p_best: f64,
}

impl HostModel {
    pub fn new(name: impl Into<String>, curve: PowerCurve, capacity_mips: f64) -> Result<Self> {
        if !(capacity_mips.is_finite() && capacity_mips > 0.0) {
            return Err(Error::config("capacity_mips", "must be > 0"));
        }
        let p_best = cost::p_best_of(&curve);
        Ok(Self {
            name: name.into(),
            curve,
            capacity_mips,
            p_best,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn curve(&self) -> &PowerCurve {
        &self.curve
    }

    pub fn capacity_mips(&self) -> f64 {
        self.capacity_mips
    }

    /// Watts at the most power-efficient measured level.
    pub fn p_best(&self) -> f64 {
        self.p_best
    }

    pub fn with_capacity(&self, capacity_mips: f64) -> Result<Self> {
        Self::new(self.name.clone(), self.curve.clone(), capacity_mips)
    }

    /// Look up one of the bundled presets by name.
    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, w)| Self::new(*n, PowerCurve::new(*w).unwrap(), DEFAULT_CAPACITY_MIPS).unwrap())
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn dell_r820() -> Self {
        Self::preset("dell-r820").unwrap()
    }
}

/// Average active power (W) of the four reference servers.
pub const PRESETS: [(&str, [f64; 11]); 4] = [
    (
        "fujitsu-rx1330-m1",
        [13.8, 20.8, 23.9, 26.3, 29.1, 32.6, 36.2, 42.0, 48.6, 55.9, 63.7],
    ),
    (
        "inspur-nf5280m4",
        [44.4, 83.3, 101.0, 118.0, 135.0, 146.0, 161.0, 190.0, 218.0, 255.0, 301.0],
    ),
    (
        "dell-r820",
        [71.8, 135.0, 156.0, 176.0, 198.0, 219.0, 243.0, 269.0, 297.0, 318.0, 374.0],
    ),
    (
        "ibm-nx360-m4",
        [497.0, 814.0, 947.0, 1079.0, 1211.0, 1344.0, 1493.0, 1648.0, 1863.0, 2108.0, 2414.0],
    ),
];

/// Where a VM currently runs and how much CPU it draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedVm {
    pub owner: UserId,
    pub pm: PmId,
    pub demand: f64,
}

#[derive(Debug, Clone, Default)]
struct PmSlot {
    load: f64,
    vms: Vec<VmId>,
    /// Distinct owners with their VM counts on this PM.
    users: Vec<(UserId, u32)>,
    listed: bool,
    util: f64,
    power_dev: f64,
}

/// Running sums over PMs that host at least one VM. They let the cost model
/// price a state, or a single extra placement, in constant time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Aggregates {
    pub active: usize,
    /// Sum over active PMs of (distinct owners - 1).
    pub coloc_excess: usize,
    pub sum_util: f64,
    pub sum_util_sq: f64,
    /// Sum over active PMs of |P_i - P_best| / P_best.
    pub sum_power_dev: f64,
}

/// VM-to-PM mapping plus per-PM occupancy and ownership bookkeeping.
///
/// `occupied_pms` keeps PMs in first-use order. A PM whose last VM leaves stays
/// listed until [`AllocationState::reclaim`] runs, but it no longer counts as
/// occupied for any cost term.
#[derive(Debug, Clone)]
pub struct AllocationState {
    host: HostModel,
    vms: BTreeMap<VmId, PlacedVm>,
    pms: Vec<PmSlot>,
    occupied: Vec<PmId>,
    user_vms: BTreeMap<UserId, u32>,
    agg: Aggregates,
}

impl AllocationState {
    pub fn new(host: HostModel) -> Self {
        Self {
            host,
            vms: BTreeMap::new(),
            pms: Vec::new(),
            occupied: Vec::new(),
            user_vms: BTreeMap::new(),
            agg: Aggregates::default(),
        }
    }

    pub fn host(&self) -> &HostModel {
        &self.host
    }

    /// Id the next call to [`fresh_pm`](Self::fresh_pm) will hand out.
    pub fn next_pm_id(&self) -> PmId {
        PmId(self.pms.len() as u32)
    }

    /// Reserve a brand-new, empty PM.
    pub fn fresh_pm(&mut self) -> PmId {
        let id = self.next_pm_id();
        self.pms.push(PmSlot::default());
        id
    }

    fn slot_mut(&mut self, pm: PmId) -> &mut PmSlot {
        let idx = pm.0 as usize;
        if idx >= self.pms.len() {
            self.pms.resize_with(idx + 1, PmSlot::default);
        }
        &mut self.pms[idx]
    }

    fn slot(&self, pm: PmId) -> Option<&PmSlot> {
        self.pms.get(pm.0 as usize)
    }

    pub fn place(&mut self, vm: VmId, owner: UserId, demand: f64, pm: PmId) -> Result<()> {
        if self.vms.contains_key(&vm) {
            return Err(Error::DuplicateVm(vm));
        }
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(Error::InvalidArgument(format!("demand {demand} for vm {vm}")));
        }
        self.detach_pm(pm);
        let slot = self.slot_mut(pm);
        slot.load += demand;
        slot.vms.push(vm);
        match slot.users.iter_mut().find(|(u, _)| *u == owner) {
            Some((_, n)) => *n += 1,
            None => slot.users.push((owner, 1)),
        }
        let newly_listed = !slot.listed;
        slot.listed = true;
        if newly_listed {
            self.occupied.push(pm);
        }
        self.attach_pm(pm);
        *self.user_vms.entry(owner).or_insert(0) += 1;
        self.vms.insert(vm, PlacedVm { owner, pm, demand });
        Ok(())
    }

    pub fn remove(&mut self, vm: VmId) -> Result<PlacedVm> {
        let placed = self.vms.remove(&vm).ok_or(Error::UnknownVm(vm))?;
        self.detach_pm(placed.pm);
        let slot = self.slot_mut(placed.pm);
        slot.load -= placed.demand;
        slot.vms.retain(|v| *v != vm);
        if let Some(i) = slot.users.iter().position(|(u, _)| *u == placed.owner) {
            slot.users[i].1 -= 1;
            if slot.users[i].1 == 0 {
                slot.users.swap_remove(i);
            }
        }
        if slot.vms.is_empty() {
            slot.load = 0.0;
        }
        self.attach_pm(placed.pm);
        if let Some(n) = self.user_vms.get_mut(&placed.owner) {
            *n -= 1;
            if *n == 0 {
                self.user_vms.remove(&placed.owner);
            }
        }
        Ok(placed)
    }

    /// Update a placed VM's CPU demand in place.
    pub fn set_demand(&mut self, vm: VmId, demand: f64) -> Result<()> {
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(Error::InvalidArgument(format!("demand {demand} for vm {vm}")));
        }
        let placed = self.vms.get_mut(&vm).ok_or(Error::UnknownVm(vm))?;
        let (pm, old) = (placed.pm, placed.demand);
        placed.demand = demand;
        self.detach_pm(pm);
        self.slot_mut(pm).load += demand - old;
        self.attach_pm(pm);
        Ok(())
    }

    /// Drop PMs without VMs from the occupied list. Returns the reclaimed ids.
    pub fn reclaim(&mut self) -> Vec<PmId> {
        let mut reclaimed = Vec::new();
        let pms = &mut self.pms;
        self.occupied.retain(|pm| {
            let slot = &mut pms[pm.0 as usize];
            if slot.vms.is_empty() {
                slot.listed = false;
                reclaimed.push(*pm);
                false
            } else {
                true
            }
        });
        reclaimed
    }

    // Aggregate maintenance: remove a PM's contribution, mutate, re-add it.
    fn detach_pm(&mut self, pm: PmId) {
        let Some(slot) = self.pms.get(pm.0 as usize) else {
            return;
        };
        if slot.vms.is_empty() {
            return;
        }
        self.agg.active -= 1;
        self.agg.coloc_excess -= slot.users.len() - 1;
        self.agg.sum_util -= slot.util;
        self.agg.sum_util_sq -= slot.util * slot.util;
        self.agg.sum_power_dev -= slot.power_dev;
    }

    fn attach_pm(&mut self, pm: PmId) {
        let cap = self.host.capacity_mips();
        let (util, power_dev) = {
            let slot = &self.pms[pm.0 as usize];
            if slot.vms.is_empty() {
                (0.0, 0.0)
            } else {
                let u = utilization_of(slot.load, cap);
                (u, cost::power_deviation(&self.host, u))
            }
        };
        let slot = &mut self.pms[pm.0 as usize];
        slot.util = util;
        slot.power_dev = power_dev;
        if slot.vms.is_empty() {
            return;
        }
        let users = slot.users.len();
        self.agg.active += 1;
        self.agg.coloc_excess += users - 1;
        self.agg.sum_util += util;
        self.agg.sum_util_sq += util * util;
        self.agg.sum_power_dev += power_dev;
    }

    pub(crate) fn aggregates(&self) -> &Aggregates {
        &self.agg
    }

    pub fn placement(&self, vm: VmId) -> Option<&PlacedVm> {
        self.vms.get(&vm)
    }

    pub fn vms(&self) -> impl Iterator<Item = (VmId, &PlacedVm)> + '_ {
        self.vms.iter().map(|(k, v)| (*k, v))
    }

    pub fn vm_count(&self) -> usize {
        self.vms.len()
    }

    /// PMs in first-use order, including emptied PMs not yet reclaimed.
    pub fn occupied_pms(&self) -> &[PmId] {
        &self.occupied
    }

    /// PMs currently hosting at least one VM, in first-use order.
    pub fn active_pms(&self) -> impl Iterator<Item = PmId> + '_ {
        self.occupied
            .iter()
            .copied()
            .filter(|pm| !self.pms[pm.0 as usize].vms.is_empty())
    }

    pub fn active_pm_count(&self) -> usize {
        self.agg.active
    }

    pub fn pm_load(&self, pm: PmId) -> f64 {
        self.slot(pm).map_or(0.0, |s| s.load)
    }

    pub fn pm_vms(&self, pm: PmId) -> &[VmId] {
        self.slot(pm).map_or(&[], |s| s.vms.as_slice())
    }

    pub fn pm_users(&self, pm: PmId) -> impl Iterator<Item = UserId> + '_ {
        self.slot(pm)
            .into_iter()
            .flat_map(|s| s.users.iter().map(|(u, _)| *u))
    }

    pub fn pm_user_count(&self, pm: PmId) -> usize {
        self.slot(pm).map_or(0, |s| s.users.len())
    }

    pub fn pm_hosts_user(&self, pm: PmId, user: UserId) -> bool {
        self.slot(pm)
            .is_some_and(|s| s.users.iter().any(|(u, _)| *u == user))
    }

    /// Number of users with at least one placed VM.
    pub fn user_count(&self) -> usize {
        self.user_vms.len()
    }

    pub fn user_vm_count(&self, user: UserId) -> u32 {
        self.user_vms.get(&user).copied().unwrap_or(0)
    }

    pub fn total_load(&self) -> f64 {
        self.active_pms().map(|pm| self.pm_load(pm)).sum()
    }

    /// PMs whose load exceeds capacity.
    pub fn overloaded_pms(&self) -> impl Iterator<Item = PmId> + '_ {
        let cap = self.host.capacity_mips();
        self.active_pms()
            .filter(move |pm| self.pm_load(*pm) > cap + CAPACITY_SLACK_MIPS)
    }
}

pub(crate) fn utilization_of(load: f64, capacity: f64) -> f64 {
    (load / capacity).clamp(0.0, 1.0)
}

/// Load over capacity, clamped to [0, 1]; zero for a PM without VMs.
pub fn pm_utilization(state: &AllocationState, pm: PmId, host: &HostModel) -> f64 {
    if state.pm_vms(pm).is_empty() {
        return 0.0;
    }
    utilization_of(state.pm_load(pm), host.capacity_mips())
}

pub fn pm_overloaded(state: &AllocationState, pm: PmId, host: &HostModel) -> bool {
    state.pm_load(pm) > host.capacity_mips() + CAPACITY_SLACK_MIPS
}

/// Whether `pm` can take `vm` at `utilization` without exceeding capacity.
pub fn fits(state: &AllocationState, pm: PmId, host: &HostModel, vm: &VmRequest, utilization: f64) -> bool {
    fits_demand(state, pm, host, vm_demand(vm, utilization))
}

pub fn fits_demand(state: &AllocationState, pm: PmId, host: &HostModel, demand: f64) -> bool {
    state.pm_load(pm) + demand <= host.capacity_mips() + CAPACITY_SLACK_MIPS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn host() -> HostModel {
        HostModel::dell_r820()
    }

    #[test]
    fn demand_examples() {
        let vm = VmRequest::standard(VmId(0), UserId(0), 0.0);
        assert_eq!(vm_demand(&vm, 0.5), 2000.0);
        assert_eq!(vm_demand(&vm, 0.0), 0.0);
        assert_eq!(vm_demand(&vm, 1.0), 4000.0);
    }

    #[test]
    fn migration_time_with_defaults_is_200s() {
        let vm = VmRequest::standard(VmId(0), UserId(0), 0.0);
        assert_eq!(vm.migration_seconds(), 200.0);
    }

    #[test]
    fn utilization_and_overload() {
        let h = host();
        let mut s = AllocationState::new(h.clone());
        let pm = s.fresh_pm();
        assert_eq!(pm_utilization(&s, pm, &h), 0.0);
        s.place(VmId(0), UserId(0), 8000.0, pm).unwrap();
        assert_eq!(pm_utilization(&s, pm, &h), 0.5);
        s.place(VmId(1), UserId(0), 12000.0, pm).unwrap();
        assert_eq!(pm_utilization(&s, pm, &h), 1.0);
        assert!(pm_overloaded(&s, pm, &h));
    }

    #[test]
    fn fits_boundaries() {
        let h = host();
        let vm = VmRequest::standard(VmId(9), UserId(0), 0.0);
        let mut s = AllocationState::new(h.clone());
        let pm = s.fresh_pm();
        assert!(fits(&s, pm, &h, &vm, 1.0));
        s.place(VmId(0), UserId(1), 15000.0, pm).unwrap();
        assert!(!fits(&s, pm, &h, &vm, 1.0));
        s.set_demand(VmId(0), 12000.0).unwrap();
        assert!(fits(&s, pm, &h, &vm, 1.0));
    }

    #[test]
    fn bookkeeping_follows_placements() {
        let mut s = AllocationState::new(host());
        let a = s.fresh_pm();
        let b = s.fresh_pm();
        s.place(VmId(0), UserId(1), 100.0, a).unwrap();
        s.place(VmId(1), UserId(1), 100.0, a).unwrap();
        s.place(VmId(2), UserId(2), 100.0, a).unwrap();
        s.place(VmId(3), UserId(3), 100.0, b).unwrap();
        assert_eq!(s.pm_user_count(a), 2);
        assert_eq!(s.user_count(), 3);
        assert_eq!(s.occupied_pms(), &[a, b]);
        assert!(matches!(s.place(VmId(3), UserId(3), 1.0, a), Err(Error::DuplicateVm(_))));

        s.remove(VmId(0)).unwrap();
        assert_eq!(s.pm_user_count(a), 2, "user 1 still has vm 1 on pm a");
        s.remove(VmId(3)).unwrap();
        assert_eq!(s.active_pm_count(), 1);
        assert_eq!(s.occupied_pms(), &[a, b], "empty pm stays listed until reclaim");
        assert_eq!(s.reclaim(), vec![b]);
        assert_eq!(s.occupied_pms(), &[a]);
        assert!(matches!(s.remove(VmId(3)), Err(Error::UnknownVm(_))));
    }

    #[test]
    fn curve_validation() {
        assert!(PowerCurve::from_slice(&[1.0; 10]).is_err());
        let mut w = [10.0; 11];
        w[3] = 9.0;
        assert!(PowerCurve::new(w).is_err());
        w[3] = 0.0;
        assert!(PowerCurve::new(w).is_err());
        assert!(PowerCurve::new([10.0; 11]).is_ok());
    }

    #[test]
    fn presets_are_valid() {
        assert_eq!(HostModel::preset_names().count(), 4);
        for name in HostModel::preset_names() {
            let h = HostModel::preset(name).unwrap();
            assert_eq!(h.capacity_mips(), DEFAULT_CAPACITY_MIPS);
            assert!(h.curve().watts().contains(&h.p_best()));
        }
        assert!(HostModel::preset("nope").is_none());
    }
}
