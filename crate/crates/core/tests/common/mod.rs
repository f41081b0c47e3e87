//! Independent reference implementations for integration tests. Nothing here
//! calls into the crate's cost code: placements are plain tuples and every
//! formula is written out longhand.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmplace::aco::BatchVm;
use vmplace::model::{AllocationState, HostModel, PmId, UserId, VmId};

pub const DELL: [f64; 11] = [71.8, 135.0, 156.0, 176.0, 198.0, 219.0, 243.0, 269.0, 297.0, 318.0, 374.0];

/// (owner, demand in MIPS, pm)
pub type Placement = (u32, f64, u32);

/// Linear interpolation between the bracketing 10% levels.
pub fn power(watts: &[f64; 11], u: f64) -> f64 {
    let x = u * 10.0;
    let lo = (x.floor() as usize).min(10);
    if (x - lo as f64).abs() < 1e-12 || lo == 10 {
        return watts[lo];
    }
    let t = x - lo as f64;
    watts[lo] + t * (watts[lo + 1] - watts[lo])
}

/// Watts at the level (10%..100%) with the best level-to-watts ratio, ties high.
pub fn p_best(watts: &[f64; 11]) -> f64 {
    let mut best_i = 1;
    for i in 2..=10 {
        // i / w_i >= best_i / w_best  <=>  i * w_best >= best_i * w_i
        if i as f64 * watts[best_i] >= best_i as f64 * watts[i] * (1.0 - 1e-12) {
            best_i = i;
        }
    }
    watts[best_i]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Costs {
    pub security: f64,
    pub power: f64,
    pub imbalance: f64,
    pub total: f64,
}

pub fn costs(placements: &[Placement], capacity: f64, watts: &[f64; 11], p_mal: f64, w: [f64; 3]) -> Costs {
    let mut per_pm: BTreeMap<u32, (f64, BTreeSet<u32>)> = BTreeMap::new();
    for (owner, demand, pm) in placements {
        let e = per_pm.entry(*pm).or_default();
        e.0 += demand;
        e.1.insert(*owner);
    }
    let users: BTreeSet<u32> = placements.iter().map(|p| p.0).collect();
    let n = per_pm.len() as f64;
    if per_pm.is_empty() {
        return Costs { security: 0.0, power: 0.0, imbalance: 0.0, total: 0.0 };
    }
    let security = if users.len() <= 1 {
        0.0
    } else {
        let excess: usize = per_pm.values().map(|(_, u)| u.len() - 1).sum();
        p_mal * excess as f64 / (n * (users.len() - 1) as f64)
    };
    let utils: Vec<f64> = per_pm.values().map(|(l, _)| (l / capacity).min(1.0)).collect();
    let pb = p_best(watts);
    let power_cost = utils.iter().map(|u| (power(watts, *u) - pb).abs()).sum::<f64>() / (pb * n);
    let mean = utils.iter().sum::<f64>() / n;
    let imbalance = utils.iter().map(|u| (u - mean).powi(2)).sum::<f64>().sqrt() / n;
    Costs {
        security,
        power: power_cost,
        imbalance,
        total: w[0] * security + w[1] * power_cost + w[2] * imbalance,
    }
}

pub fn state_from(host: &HostModel, placements: &[Placement]) -> AllocationState {
    let mut s = AllocationState::new(host.clone());
    for (i, (owner, demand, pm)) in placements.iter().enumerate() {
        s.place(VmId(i as u32), UserId(*owner), *demand, PmId(*pm)).unwrap();
    }
    s
}

pub fn placements_of(state: &AllocationState) -> Vec<Placement> {
    state.vms().map(|(_, p)| (p.owner.0, p.demand, p.pm.0)).collect()
}

/// A tiny allocation problem: a base layout on PMs `0..active` plus a batch.
#[derive(Debug, Clone)]
pub struct Instance {
    pub base: Vec<Placement>,
    pub active: u32,
    pub batch: Vec<(u32, f64)>,
}

impl Instance {
    pub fn random(seed: u64, max_pool: u32, max_batch: usize, capacity: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let active = rng.random_range(0..max_pool);
            let mut base = Vec::new();
            for pm in 0..active {
                for _ in 0..rng.random_range(1..=2) {
                    base.push((rng.random_range(0..5u32), demand(&mut rng), pm));
                }
            }
            let n_v = rng.random_range(1..=max_batch);
            let batch: Vec<(u32, f64)> = (0..n_v).map(|_| (rng.random_range(0..6u32), demand(&mut rng))).collect();
            let inst = Instance { base, active, batch };
            let fits_base = (0..active).all(|pm| inst.base.iter().filter(|p| p.2 == pm).map(|p| p.1).sum::<f64>() <= capacity);
            if fits_base && brute_force(&inst, max_pool, capacity, &DELL, 0.2, [1.0 / 3.0; 3]).is_some() {
                return inst;
            }
        }
    }

    pub fn base_state(&self, host: &HostModel) -> AllocationState {
        state_from(host, &self.base)
    }

    pub fn batch_vms(&self) -> Vec<BatchVm> {
        self.batch
            .iter()
            .enumerate()
            .map(|(i, (owner, demand))| BatchVm { id: VmId(1000 + i as u32), owner: UserId(*owner), demand: *demand })
            .collect()
    }
}

fn demand(rng: &mut impl Rng) -> f64 {
    // Standard VM peak (4000 MIPS) at 10%..100% utilization.
    4000.0 * rng.random_range(1..=10) as f64 / 10.0
}

/// Minimum total cost over every capacity-feasible way to place the batch on
/// PMs `0..pool`. `None` when nothing fits.
pub fn brute_force(inst: &Instance, pool: u32, capacity: f64, watts: &[f64; 11], p_mal: f64, w: [f64; 3]) -> Option<f64> {
    let n = inst.batch.len();
    let mut slots = vec![0u32; n];
    let mut best: Option<f64> = None;
    loop {
        let mut all = inst.base.clone();
        all.extend(inst.batch.iter().zip(&slots).map(|((o, d), pm)| (*o, *d, *pm)));
        let feasible = (0..pool).all(|pm| all.iter().filter(|p| p.2 == pm).map(|p| p.1).sum::<f64>() <= capacity + 1e-6);
        if feasible {
            let c = costs(&all, capacity, watts, p_mal, w).total;
            best = Some(best.map_or(c, |b: f64| b.min(c)));
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            slots[i] += 1;
            if slots[i] < pool {
                break;
            }
            slots[i] = 0;
            i += 1;
        }
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against Exp(lambda).
pub fn ks_exponential(samples: &[f64], lambda: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = 1.0 - (-lambda * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
