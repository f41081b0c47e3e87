//! The three-factor placement objective: co-residence risk, normalized power
//! deviation from the most efficient operating point, and utilization
//! imbalance, blended by [`CostWeights`].
//!
//! The free functions recompute every term from the placement itself. The
//! [`CostModel`] methods read the running sums kept by [`AllocationState`]
//! instead, which is what the allocators use on their hot paths. The two
//! routes are checked against each other in tests and in the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    fits_demand, pm_utilization, utilization_of, AllocationState, Aggregates, HostModel, PmId,
    PowerCurve, UserId,
};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub security: f64,
    pub power: f64,
    pub balance: f64,
}

impl CostWeights {
    pub fn new(security: f64, power: f64, balance: f64) -> Result<Self> {
        let w = Self {
            security,
            power,
            balance,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn equal() -> Self {
        Self {
            security: 1.0 / 3.0,
            power: 1.0 / 3.0,
            balance: 1.0 / 3.0,
        }
    }

    /// `security` for the risk term; the rest split evenly between power and balance.
    pub fn with_security(security: f64) -> Result<Self> {
        let rest = (1.0 - security) / 2.0;
        Self::new(security, rest, rest)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_security", self.security),
            ("w_power", self.power),
            ("w_balance", self.balance),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config(name, format!("{w} is outside [0, 1]")));
            }
        }
        let sum = self.security + self.power + self.balance;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::config("weights", format!("sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::equal()
    }
}

/// Parse a `w1,w2,w3` triple (security, power, balance).
pub fn parse_weights(text: &str) -> Result<CostWeights> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::config(
            "weights",
            format!("expected three comma-separated numbers, got {}", parts.len()),
        ));
    }
    let mut w = [0.0; 3];
    for (slot, part) in w.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|e| Error::config("weights", format!("`{part}`: {e}")))?;
    }
    CostWeights::new(w[0], w[1], w[2])
}

/// How many PMs divide the co-location sum in the risk term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityDenominator {
    /// PMs that currently host VMs.
    #[default]
    Occupied,
    /// A fixed provisioned fleet size (never smaller than the occupied count).
    Provisioned(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityContext {
    /// Estimated fraction of malicious users.
    pub p_malicious: f64,
    #[serde(default)]
    pub denominator: SecurityDenominator,
}

impl SecurityContext {
    pub fn new(p_malicious: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_malicious) {
            return Err(Error::config("p_malicious", format!("{p_malicious} is outside [0, 1]")));
        }
        Ok(Self {
            p_malicious,
            denominator: SecurityDenominator::Occupied,
        })
    }

    fn pm_divisor(&self, occupied: usize) -> usize {
        match self.denominator {
            SecurityDenominator::Occupied => occupied,
            SecurityDenominator::Provisioned(n) => n.max(occupied),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub security: f64,
    pub power: f64,
    pub imbalance: f64,
    pub total: f64,
    pub weights: CostWeights,
}

impl CostBreakdown {
    pub fn from_parts(security: f64, power: f64, imbalance: f64, weights: CostWeights) -> Self {
        Self {
            security,
            power,
            imbalance,
            total: weights.security * security + weights.power * power + weights.balance * imbalance,
            weights,
        }
    }

    pub fn zero(weights: CostWeights) -> Self {
        Self::from_parts(0.0, 0.0, 0.0, weights)
    }
}

/// Probability-weighted co-residence risk of the current placement.
pub fn security_risk(state: &AllocationState, ctx: &SecurityContext, n_users: usize) -> f64 {
    let active: Vec<PmId> = state.active_pms().collect();
    if n_users <= 1 || active.is_empty() {
        return 0.0;
    }
    let excess: usize = active.iter().map(|pm| state.pm_user_count(*pm) - 1).sum();
    let divisor = ctx.pm_divisor(active.len());
    ctx.p_malicious * excess as f64 / (divisor as f64 * (n_users - 1) as f64)
}

/// Power drawn at utilization `u`, linearly interpolated between the two
/// bracketing measured levels. Measured levels are returned verbatim.
pub fn power_at(curve: &PowerCurve, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("utilization {u} is outside [0, 1]")));
    }
    let w = curve.watts();
    let scaled = u * 10.0;
    let nearest = scaled.round();
    if (scaled - nearest).abs() < 1e-12 {
        return Ok(w[nearest as usize]);
    }
    let lo = scaled.floor() as usize;
    let hi = lo + 1;
    let (u_l, u_h) = (lo as f64 / 10.0, hi as f64 / 10.0);
    let (p_l, p_h) = (w[lo], w[hi]);
    Ok((p_h - p_l) / (u_h - u_l) * u - (p_h * u_l - p_l * u_h) / (u_h - u_l))
}

/// Watts at the measured level with the highest utilization-to-power ratio.
/// The idle level is skipped; near-ties go to the higher level.
pub(crate) fn p_best_of(curve: &PowerCurve) -> f64 {
    let w = curve.watts();
    let mut best = (0.0_f64, w[10]);
    for (level, watts) in w.iter().enumerate().skip(1) {
        let ratio = level as f64 / watts;
        if ratio >= best.0 * (1.0 - 1e-12) {
            best = (ratio, *watts);
        }
    }
    best.1
}

pub fn p_best(host: &HostModel) -> f64 {
    p_best_of(host.curve())
}

/// |P(u) - P_best| / P_best for one PM.
pub(crate) fn power_deviation(host: &HostModel, u: f64) -> f64 {
    let p = power_at(host.curve(), u).expect("utilization is clamped");
    (p - host.p_best()).abs() / host.p_best()
}

/// Mean normalized distance of each occupied PM's draw from P_best.
pub fn power_cost(state: &AllocationState, host: &HostModel) -> f64 {
    let active: Vec<PmId> = state.active_pms().collect();
    if active.is_empty() {
        return 0.0;
    }
    let pb = p_best(host);
    let sum: f64 = active
        .iter()
        .map(|pm| {
            let p = power_at(host.curve(), pm_utilization(state, *pm, host)).expect("clamped");
            (p - pb).abs()
        })
        .sum();
    sum / (pb * active.len() as f64)
}

/// Root of summed squared utilization deviations, divided by the PM count.
pub fn imbalance_cost(state: &AllocationState, host: &HostModel) -> f64 {
    let utils: Vec<f64> = state
        .active_pms()
        .map(|pm| pm_utilization(state, pm, host))
        .collect();
    if utils.len() < 2 {
        return 0.0;
    }
    let n = utils.len() as f64;
    let mean = utils.iter().sum::<f64>() / n;
    let ss: f64 = utils.iter().map(|u| (u - mean) * (u - mean)).sum();
    ss.sqrt() / n
}

pub fn total_cost(
    state: &AllocationState,
    host: &HostModel,
    ctx: &SecurityContext,
    n_users: usize,
    weights: &CostWeights,
) -> CostBreakdown {
    CostBreakdown::from_parts(
        security_risk(state, ctx, n_users),
        power_cost(state, host),
        imbalance_cost(state, host),
        *weights,
    )
}

/// Full from-scratch evaluation with `n_users` taken from the state.
pub fn recompute(state: &AllocationState, model: &CostModel) -> CostBreakdown {
    total_cost(state, state.host(), &model.security, state.user_count(), &model.weights)
}

/// Change in total cost from placing one more VM of `owner` with `demand` MIPS on `pm`.
pub fn incremental_cost(
    state: &AllocationState,
    ctx: &SecurityContext,
    weights: &CostWeights,
    owner: UserId,
    demand: f64,
    pm: PmId,
) -> Result<f64> {
    CostModel {
        security: *ctx,
        weights: *weights,
    }
    .incremental(state, owner, demand, pm)
}

/// Security context plus weights: everything needed to price a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub security: SecurityContext,
    pub weights: CostWeights,
}

impl CostModel {
    pub fn new(security: SecurityContext, weights: CostWeights) -> Self {
        Self { security, weights }
    }

    /// Cost of `state` from its running sums (constant time).
    pub fn evaluate(&self, state: &AllocationState) -> CostBreakdown {
        self.breakdown_of(state.aggregates(), state.user_count())
    }

    fn breakdown_of(&self, agg: &Aggregates, n_users: usize) -> CostBreakdown {
        if agg.active == 0 {
            return CostBreakdown::zero(self.weights);
        }
        let n = agg.active as f64;
        let security = if n_users <= 1 {
            0.0
        } else {
            let divisor = self.security.pm_divisor(agg.active) as f64;
            self.security.p_malicious * agg.coloc_excess as f64 / (divisor * (n_users - 1) as f64)
        };
        let power = agg.sum_power_dev / n;
        let imbalance = if agg.active < 2 {
            0.0
        } else {
            (agg.sum_util_sq - agg.sum_util * agg.sum_util / n).max(0.0).sqrt() / n
        };
        CostBreakdown::from_parts(security, power, imbalance, self.weights)
    }

    /// Cost delta of adding a VM to `pm`. Errors if it does not fit.
    pub fn incremental(&self, state: &AllocationState, owner: UserId, demand: f64, pm: PmId) -> Result<f64> {
        if !fits_demand(state, pm, state.host(), demand) {
            return Err(Error::Infeasible { pm, demand });
        }
        let before = self.evaluate(state).total;
        Ok(self.total_after(state, owner, state.user_vm_count(owner) == 0, demand, pm) - before)
    }

    /// Total cost after a hypothetical placement, without touching the state.
    /// Capacity is not checked.
    pub(crate) fn total_after(
        &self,
        state: &AllocationState,
        owner: UserId,
        owner_is_new: bool,
        demand: f64,
        pm: PmId,
    ) -> f64 {
        let host = state.host();
        let mut agg = *state.aggregates();
        let vms_here = state.pm_vms(pm).len();
        let load = state.pm_load(pm);
        if vms_here > 0 {
            let u = utilization_of(load, host.capacity_mips());
            agg.sum_util -= u;
            agg.sum_util_sq -= u * u;
            agg.sum_power_dev -= power_deviation(host, u);
            if !state.pm_hosts_user(pm, owner) {
                agg.coloc_excess += 1;
            }
        } else {
            agg.active += 1;
        }
        let u = utilization_of(load + demand, host.capacity_mips());
        agg.sum_util += u;
        agg.sum_util_sq += u * u;
        agg.sum_power_dev += power_deviation(host, u);
        let n_users = state.user_count() + usize::from(owner_is_new);
        self.breakdown_of(&agg, n_users).total
    }
}
