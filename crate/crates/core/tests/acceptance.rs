//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use vmplace::aco::{self, AcoParams, BatchVm, PheromoneMatrix};
use vmplace::cost::{self, CostBreakdown, CostModel, CostWeights, SecurityContext};
use vmplace::experiment::{self, RunConfig, SweepAxis};
use vmplace::model::{vm_demand, AllocationState, HostModel, PowerCurve, UserId, VmId, VmRequest};
use vmplace::sim::{self, Policy, SimOptions};
use vmplace::workload::{generate_scenario, sample_interarrival, utilization_at, ScenarioConfig, TraceStore};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn equal_model(p_mal: f64) -> CostModel {
    CostModel::new(SecurityContext::new(p_mal).unwrap(), CostWeights::equal())
}

// 1. Formula golden tests.
fn formulas() -> Outcome {
    #[derive(Deserialize)]
    struct Golden {
        host_table: BTreeMap<String, [f64; 11]>,
        power_points: Vec<Point>,
        states: Vec<State>,
        weighted_sums: Vec<Sum>,
    }
    #[derive(Deserialize)]
    struct Point {
        host: String,
        u: f64,
        watts: f64,
    }
    #[derive(Deserialize)]
    struct State {
        watts: [f64; 11],
        capacity_mips: f64,
        p_malicious: f64,
        placements: Vec<(u32, f64, u32)>,
        expected: BTreeMap<String, f64>,
    }
    #[derive(Deserialize)]
    struct Sum {
        weights: [f64; 3],
        parts: [f64; 3],
        total: f64,
        tolerance: f64,
    }
    let g: Golden = serde_json::from_str(include_str!("data/golden_costs.json")).unwrap();
    let mut failures = Vec::new();
    let mut exact_points = 0;
    for (name, watts) in &g.host_table {
        let host = HostModel::preset(name).unwrap();
        for (i, w) in watts.iter().enumerate() {
            if cost::power_at(host.curve(), i as f64 / 10.0).unwrap() == *w {
                exact_points += 1;
            } else {
                failures.push(format!("{name}@{}%", i * 10));
            }
        }
    }
    for p in &g.power_points {
        let got = cost::power_at(HostModel::preset(&p.host).unwrap().curve(), p.u).unwrap();
        if (got - p.watts).abs() > 1e-9 {
            failures.push(format!("power_at {}@{}", p.host, p.u));
        }
    }
    for (i, s) in g.states.iter().enumerate() {
        let host = HostModel::new("golden", PowerCurve::new(s.watts).unwrap(), s.capacity_mips).unwrap();
        let state = common::state_from(&host, &s.placements);
        let ctx = SecurityContext::new(s.p_malicious).unwrap();
        let b = cost::total_cost(&state, &host, &ctx, state.user_count(), &CostWeights::equal());
        for (k, want) in &s.expected {
            let have = match k.as_str() {
                "security" => b.security,
                "power" => b.power,
                "imbalance" => b.imbalance,
                _ => b.total,
            };
            if (have - want).abs() > 1e-9 {
                failures.push(format!("state {i} {k}: {have} vs {want}"));
            }
        }
    }
    for s in &g.weighted_sums {
        let w = CostWeights::new(s.weights[0], s.weights[1], s.weights[2]).unwrap();
        if (CostBreakdown::from_parts(s.parts[0], s.parts[1], s.parts[2], w).total - s.total).abs() > s.tolerance {
            failures.push("weighted sum".into());
        }
    }
    outcome(
        failures.is_empty() && exact_points == 44,
        format!("{exact_points}/44 measured points exact, {} golden mismatches {:?}", failures.len(), failures),
    )
}

// 2. Brute-force optimality.
fn brute_force() -> Outcome {
    let host = HostModel::dell_r820();
    let model = equal_model(0.2);
    let (mut exact, mut within, mut worst) = (0, 0, 0.0f64);
    for seed in 0..100 {
        let inst = common::Instance::random(10_000 + seed, 3, 6, host.capacity_mips());
        let oracle = common::brute_force(&inst, 3, host.capacity_mips(), &common::DELL, 0.2, [1.0 / 3.0; 3]).unwrap();
        let params = AcoParams { seed, max_servers: Some(3), ..Default::default() };
        let got = aco::solve(&inst.base_state(&host), &inst.batch_vms(), &model, &params).unwrap().cost.total;
        if (got - oracle).abs() <= 1e-9 {
            exact += 1;
        }
        let rel = if oracle > 0.0 { (got - oracle) / oracle } else { got - oracle };
        worst = worst.max(rel);
        if rel <= 0.05 + 1e-12 {
            within += 1;
        }
    }
    outcome(
        exact >= 95 && within == 100,
        format!("{exact}/100 exact (need 95), {within}/100 within 5%, worst gap {:.3}%", worst * 100.0),
    )
}

// 3. Policy ordering.
fn policy_ordering() -> Outcome {
    let traces = TraceStore::synthetic(16, 0);
    let mut policies = vec![Policy::Aco(AcoParams::default())];
    for k in [2, 4, 6, 8] {
        policies.push(Policy::RoundRobin { k });
        policies.push(Policy::Pssf { k });
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.004, 0.007, 0.01] {
        let scenario = ScenarioConfig { lambda_rate: lambda, duration: 5000.0, window_length: 1000.0, p_malicious: 0.2, seed: 0, ..Default::default() };
        let base = RunConfig::new(scenario, policies[0].clone());
        let rows = experiment::compare(&base, &policies, &traces, 20).unwrap();
        let aco = rows[0].total;
        let best = rows[1..].iter().min_by(|a, b| a.total.total_cmp(&b.total)).unwrap();
        pass &= aco < best.total;
        parts.push(format!("lambda={lambda}: aco {aco:.4} vs {} {:.4}", best.policy, best.total));
    }
    outcome(pass, parts.join("; "))
}

// 4. Security-weight trends on 30 users x 2 VMs in one window.
fn security_weight_trend() -> Outcome {
    let traces = TraceStore::synthetic(16, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let batch: Vec<BatchVm> = (0..60u32)
        .map(|i| {
            use rand::Rng;
            let mut vm = VmRequest::standard(VmId(i), UserId(i / 2), 0.0);
            vm.trace_id = rng.random_range(0..traces.len());
            vm.trace_phase = rng.random::<f64>() * traces.get(vm.trace_id).unwrap().period();
            let u = utilization_at(traces.get(vm.trace_id).unwrap(), &vm, 1000.0);
            BatchVm { id: vm.id, owner: vm.owner, demand: vm_demand(&vm, u) }
        })
        .collect();
    let base = AllocationState::new(HostModel::dell_r820());
    let mut rows = Vec::new();
    for w in [0.3, 0.5, 0.7, 0.9] {
        let model = CostModel::new(SecurityContext::new(0.2).unwrap(), CostWeights::with_security(w).unwrap());
        let sol = aco::solve(&base, &batch, &model, &AcoParams { seed: 7, ..Default::default() }).unwrap();
        rows.push((w, sol.occupied_after, sol.cost.security));
    }
    let pm_violations = rows.windows(2).filter(|p| p[1].1 < p[0].1).count();
    let sec_violations = rows.windows(2).filter(|p| p[1].2 > p[0].2 + 1e-12).count();
    let strict = rows[3].1 > rows[0].1;
    outcome(
        pm_violations + sec_violations <= 1 && strict,
        format!(
            "(w, occupied PMs, security) = {:?}; violations pm={pm_violations} security={sec_violations}",
            rows.iter().map(|(w, n, s)| (*w, *n, (s * 1e4).round() / 1e4)).collect::<Vec<_>>()
        ),
    )
}

// 5. Degenerate parameters.
fn degenerate_parameters() -> Outcome {
    let host = HostModel::dell_r820();
    let mut notes = Vec::new();
    let mut pass = true;
    for seed in 0..10u64 {
        let inst = common::Instance::random(500 + seed, 3, 6, host.capacity_mips());
        let base = inst.base_state(&host);
        let batch = inst.batch_vms();
        let (n_min, n_max) = aco::server_count_range(&base, &batch, Some(3)).unwrap();

        // phi = 0: pheromone never moves.
        let p = AcoParams { phi: 0.0, seed, n_iterations: 20, n_ants: 10, ..Default::default() };
        let init = PheromoneMatrix::new(batch.len(), n_max);
        let mut frozen = true;
        aco::solve_subproblem_observed(&base, &batch, n_max, &equal_model(0.2), &p, &mut |_, ph| {
            frozen &= ph.values().iter().zip(init.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        });
        pass &= frozen;

        // alpha = 0: pheromone perturbation changes nothing.
        let p = AcoParams { alpha: 0.0, seed, ..Default::default() };
        let mut skewed = PheromoneMatrix::new(batch.len(), n_min);
        for r in 0..skewed.rows() {
            for c in 0..skewed.cols() {
                skewed.set(r, c, 0.01 + (r * 7 + c * 3) as f64);
            }
        }
        let uniform = PheromoneMatrix::new(batch.len(), n_min);
        let model = equal_model(0.2);
        let draw = |ph: &PheromoneMatrix, model: &CostModel, p: &AcoParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..25).map(|_| aco::construct_assignment(&base, &batch, n_min, ph, model, p, &mut rng)).collect::<Vec<_>>()
        };
        let same_alpha = draw(&uniform, &model, &p).iter().map(|c| c.as_ref().map(|c| c.assignment.clone())).eq(draw(&skewed, &model, &p).iter().map(|c| c.as_ref().map(|c| c.assignment.clone())));
        pass &= same_alpha;

        // beta = 0: a different cost landscape changes nothing.
        let p = AcoParams { beta: 0.0, seed, ..Default::default() };
        let other = CostModel::new(SecurityContext::new(0.9).unwrap(), CostWeights::new(0.8, 0.1, 0.1).unwrap());
        let same_beta = draw(&skewed, &model, &p).iter().map(|c| c.as_ref().map(|c| c.assignment.clone())).eq(draw(&skewed, &other, &p).iter().map(|c| c.as_ref().map(|c| c.assignment.clone())));
        pass &= same_beta;
        if !(frozen && same_alpha && same_beta) {
            notes.push(format!("seed {seed}: phi0={frozen} alpha0={same_alpha} beta0={same_beta}"));
        }
    }
    // Probability-level checks too.
    let mask = [true, true, true];
    let a = aco::selection_probabilities(&[0.2, 0.3, 0.5], &[0.1, 0.4, 0.2], &mask, 0.0, 0.7, 1e-6).unwrap();
    let b = aco::selection_probabilities(&[9.0, 0.01, 1.0], &[0.1, 0.4, 0.2], &mask, 0.0, 0.7, 1e-6).unwrap();
    let c = aco::selection_probabilities(&[0.2, 0.3, 0.5], &[0.9, -0.4, 0.0], &mask, 0.6, 0.0, 1e-6).unwrap();
    let d = aco::selection_probabilities(&[0.2, 0.3, 0.5], &[0.1, 0.4, 0.2], &mask, 0.6, 0.0, 1e-6).unwrap();
    pass &= a == b && c == d;
    outcome(pass, if notes.is_empty() { "phi=0 frozen, alpha=0 and beta=0 sequences identical over 10 instances".into() } else { notes.join("; ") })
}

// 6. Arrival statistics.
fn arrivals() -> Outcome {
    let lambda = 0.004;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let xs: Vec<f64> = (0..100_000).map(|_| sample_interarrival(&mut rng, lambda)).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let d = common::ks_exponential(&xs, lambda);
    let critical = 1.628 / (xs.len() as f64).sqrt();
    outcome(
        (mean - 250.0).abs() <= 0.02 * 250.0 && d < critical && xs.iter().all(|x| *x > 0.0),
        format!("mean {mean:.3} (250 +/- 5), KS D {d:.5} < {critical:.5}"),
    )
}

// 7. Simulator conservation.
fn conservation() -> Outcome {
    let traces = TraceStore::synthetic(16, 0);
    let mut worst_err = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut migrations = 0;
    let mut durations_ok = true;
    let mut ticks = 0;
    for (i, policy) in [Policy::Aco(AcoParams::default()), Policy::RoundRobin { k: 4 }, Policy::Pssf { k: 2 }].iter().enumerate() {
        for seed in 0..3 {
            let cfg = ScenarioConfig { lambda_rate: 0.008, duration: 10_000.0, window_length: 500.0, seed: seed + 10 * i as u64, ..Default::default() };
            let scenario = generate_scenario(&cfg, &traces).unwrap();
            let opts = SimOptions { tick: cfg.tick, aco_seed: seed };
            let out = sim::run(&scenario, &traces, &HostModel::dell_r820(), &equal_model(0.2), policy, &opts).unwrap();
            worst_err = worst_err.max(out.max_conservation_error);
            worst_ratio = worst_ratio.max(out.max_load_ratio_after_overload);
            migrations += out.migrations.len();
            ticks += out.metrics.len();
            durations_ok &= out.migrations.iter().all(|m| {
                let vm = scenario.events.iter().flat_map(|e| &e.vms).find(|v| v.id == m.vm).unwrap();
                m.migration_seconds == vm.image_size_gb * 8000.0 / vm.bandwidth_mbps && m.migration_seconds == 200.0
            });
        }
    }
    outcome(
        worst_err < 1e-9 && worst_ratio <= 1.0 + 1e-12 && durations_ok && migrations > 0,
        format!("{ticks} ticks, max |maintained - recomputed| {worst_err:.2e}, max load/capacity {worst_ratio:.4}, {migrations} migrations all 200 s: {durations_ok}"),
    )
}

// 8. Determinism of every output.
fn determinism() -> Outcome {
    let traces = TraceStore::synthetic(8, 1);
    let dir = tempfile::tempdir().unwrap();
    let scenario = ScenarioConfig { lambda_rate: 0.006, duration: 4000.0, window_length: 800.0, seed: 13, ..Default::default() };
    let mut identical = true;
    let mut files = 0;
    for policy in [Policy::Aco(AcoParams::default()), Policy::RoundRobin { k: 2 }, Policy::Pssf { k: 6 }] {
        let cfg = RunConfig::new(scenario.clone(), policy);
        let a = experiment::run_to_dir(&cfg, &traces, &dir.path().join("a")).unwrap();
        let b = experiment::run_to_dir(&cfg, &traces, &dir.path().join("b")).unwrap();
        for entry in std::fs::read_dir(&a.dir).unwrap() {
            let name = entry.unwrap().file_name();
            identical &= std::fs::read(a.dir.join(&name)).unwrap() == std::fs::read(b.dir.join(&name)).unwrap();
            files += 1;
        }
    }
    let base = RunConfig::new(scenario, Policy::Aco(AcoParams { n_ants: 5, n_iterations: 10, ..Default::default() }));
    let policies = [Policy::Aco(AcoParams { n_ants: 5, n_iterations: 10, ..Default::default() }), Policy::Pssf { k: 4 }];
    let c1 = experiment::compare_csv(&experiment::compare(&base, &policies, &traces, 2).unwrap(), "");
    let c2 = experiment::compare_csv(&experiment::compare(&base, &policies, &traces, 2).unwrap(), "");
    let s1 = experiment::sweep_csv(&experiment::sweep(&base, SweepAxis::Phi, &[0.2, 0.8], &traces, 1).unwrap(), "");
    let s2 = experiment::sweep_csv(&experiment::sweep(&base, SweepAxis::Phi, &[0.2, 0.8], &traces, 1).unwrap(), "");
    identical &= c1 == c2 && s1 == s2;
    outcome(identical, format!("{files} run files plus compare and sweep tables byte-identical: {identical}"))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 formula golden values", formulas, Duration::from_secs(1)),
        ("2 brute-force optimality", brute_force, Duration::from_secs(30)),
        ("3 policy ordering", policy_ordering, Duration::from_secs(600)),
        ("4 security-weight trends", security_weight_trend, Duration::from_secs(600)),
        ("5 degenerate parameters", degenerate_parameters, Duration::from_secs(600)),
        ("6 arrival statistics", arrivals, Duration::from_secs(600)),
        ("7 simulator conservation", conservation, Duration::from_secs(600)),
        ("8 determinism", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        failed += usize::from(!pass);
        println!(
            "[{}] criterion {name}: {} ({:.2} s, budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
