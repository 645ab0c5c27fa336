//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero when any criterion fails.

use std::time::Instant;

use evmpc_core::coordinator::{ConstantStep, ConvergenceConfig, Coordinator, SlotMarket};
use evmpc_core::dso_agent::{solve_dso, DsoSubproblem};
use evmpc_core::ev_agent::{solve_ev, EvSubproblem, LogUtility};
use evmpc_core::model::{DsoSpec, EvSession, PriceVector, StorageSpec, TimeGrid, Tolerances};
use evmpc_core::mpc;
use evmpc_core::oracle::{solve_central, CentralProblem, OracleCap};
use evmpc_core::qp::ActiveSet;
use evmpc_core::scenario::Scenario;
use evmpc_core::trace::{write_trace, SimulationTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WELFARE_GAP: f64 = 0.01;
const BALANCE: f64 = 0.1;
const SOC_ERROR: f64 = 1e-3;
const K_MAX: usize = 2000;
const SMOOTHING_RATIO: f64 = 0.5;
const SUBGRADIENT_REL: f64 = 0.01;
const KKT: f64 = 1e-4;

const SLOT_HOURS: f64 = 0.25;

const REFERENCE_DSO: DsoSpec = DsoSpec {
    a: 0.06,
    b: 0.9,
    p_min: 0.0,
    p_max: 100.0,
};

fn reference_storage() -> StorageSpec {
    StorageSpec {
        ps_min: -100.0,
        ps_max: 100.0,
        x0: 100.0,
        x_ref: 100.0,
        delta_s: 1.0,
        rho: 1.0,
    }
}

fn ev(id: &str, arrival: usize, departure: usize, energy: f64) -> EvSession {
    EvSession {
        id: id.into(),
        arrival,
        departure,
        p_min: 0.0,
        p_max: 22.0,
        weight: 10.0,
        xi: 0.0,
        energy,
    }
}

fn coordinator(eps_balance: f64, k_max: usize) -> Coordinator {
    Coordinator::new(
        ConvergenceConfig {
            gamma: 0.005,
            eps_balance,
            k_max,
        },
        Tolerances::default(),
        LogUtility::default(),
        Box::new(ConstantStep),
        Box::new(ActiveSet::default()),
    )
}

fn cost(q: f64, dso: &DsoSpec) -> f64 {
    dso.a * q * q + dso.b * q
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference_run() -> SimulationTrace {
    mpc::run(&Scenario::reference()).expect("reference scenario runs")
}

fn a1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let coord = coordinator(BALANCE, K_MAX);
    let storage = reference_storage();
    let mut worst_gap = 0.0_f64;
    let mut worst_residual = 0.0_f64;
    let mut all_converged = true;
    for i in 0..25 {
        let r = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=4);
        let evs: Vec<EvSession> = (0..r)
            .map(|k| {
                let stay = if k == 0 { n } else { rng.gen_range(1..=n) };
                let max = 22.0 * SLOT_HOURS * stay as f64;
                ev(&format!("i{i}r{k}"), 0, stay, rng.gen_range(0.0..0.9 * max))
            })
            .collect();
        let problem = CentralProblem {
            evs: evs.clone(),
            dso: REFERENCE_DSO,
            storage,
            x_now: storage.x_ref,
            window: TimeGrid::new(0, n, SLOT_HOURS).unwrap(),
        };
        let oracle =
            solve_central(&problem, &coord.utility, &coord.tolerances, OracleCap::default()).expect("oracle solves");
        let market = SlotMarket {
            window: problem.window,
            evs: &evs,
            dso: &problem.dso,
            storage: &problem.storage,
            x_now: problem.x_now,
        };
        let result = coord.negotiate_slot(&market, 4.0).expect("market clears");
        all_converged &= result.converged;
        let profiles: Vec<Vec<f64>> = result.state.evs.iter().map(|s| s.profile.clone().padded(n).0).collect();
        let decentralized = problem.welfare(&coord.utility, &profiles, &result.state.dso.p_s);
        worst_gap = worst_gap.max((oracle.welfare - decentralized).abs() / oracle.welfare.abs());
        worst_residual = worst_residual.max(result.state.max_residual());
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        all_converged && worst_gap <= WELFARE_GAP && worst_residual <= BALANCE,
        format!(
            "25 instances, worst welfare gap {:.4}% (limit 1%), worst residual {:.4} kW (limit 0.1), {:.2} s",
            100.0 * worst_gap,
            worst_residual,
            elapsed
        ),
    )
}

fn a2_driver_satisfaction(trace: &SimulationTrace, scenario: &Scenario) -> Outcome {
    let sessions = scenario.sessions();
    let feasible = sessions
        .iter()
        .all(|ev| ev.energy <= ev.max_deliverable(ev.departure - ev.arrival, SLOT_HOURS));
    let worst = trace.outcomes.iter().map(|o| o.remaining).fold(0.0, f64::max);
    outcome(
        feasible && trace.outcomes.len() == 20 && worst <= SOC_ERROR,
        format!(
            "{} sessions, all feasible: {}, worst final SOC error {:.3e} kWh (limit 1e-3)",
            trace.outcomes.len(),
            feasible,
            worst
        ),
    )
}

fn a3_dual_convergence(trace: &SimulationTrace) -> Outcome {
    let worst = trace.records.iter().map(|r| r.residual).fold(0.0, f64::max);
    let converged = trace.records.iter().all(|r| r.converged && r.iterations <= K_MAX);
    outcome(
        converged && worst <= BALANCE,
        format!(
            "{} slots, max iterations {} (cap 2000), worst residual {:.4} kW (limit 0.1)",
            trace.records.len(),
            trace.summary.max_iterations,
            worst
        ),
    )
}

fn a4_storage_smoothing(with_storage: &SimulationTrace) -> Outcome {
    let mut scenario = Scenario::reference();
    scenario.storage = None;
    let without = mpc::run(&scenario).expect("storage-free run");
    let ratio = with_storage.summary.price_stdev / without.summary.price_stdev;
    outcome(
        ratio <= SMOOTHING_RATIO,
        format!(
            "price stdev {:.4} with storage vs {:.4} without, ratio {:.3} (limit 0.5)",
            with_storage.summary.price_stdev, without.summary.price_stdev, ratio
        ),
    )
}

fn a5_peak_shaving(controlled: &SimulationTrace, scenario: &Scenario) -> Outcome {
    let uncontrolled = mpc::simulate_uncontrolled(scenario).expect("baseline runs");
    let sessions = scenario.sessions();
    let overlap = (0..scenario.grid.num_slots)
        .any(|t| sessions.iter().filter(|ev| ev.arrival <= t && t < ev.departure).count() >= 2);
    let (c, u) = (controlled.summary.peak_demand, uncontrolled.summary.peak_demand);
    let pass = if overlap { c < u } else { c <= u };
    outcome(
        pass,
        format!("controlled peak {c:.4} kW vs uncontrolled {u:.4} kW, sessions overlap: {overlap}"),
    )
}

fn a6_subgradient() -> Outcome {
    let evs = [ev("a", 0, 2, 6.0), ev("b", 0, 1, 2.5)];
    let storage = reference_storage();
    let tight = Coordinator::new(
        ConvergenceConfig::default(),
        Tolerances {
            energy: 1e-12,
            kkt: 1e-12,
        },
        LogUtility::default(),
        Box::new(ConstantStep),
        Box::new(ActiveSet::default()),
    );
    let market = SlotMarket {
        window: TimeGrid::new(0, 2, SLOT_HOURS).unwrap(),
        evs: &evs,
        dso: &REFERENCE_DSO,
        storage: &storage,
        x_now: storage.x0,
    };
    let dual = |lambda: &[f64]| {
        tight
            .evaluate_dual(&market, &PriceVector::new(lambda.to_vec()).unwrap(), None)
            .expect("dual evaluates")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-4;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let lambda = [rng.gen_range(0.5..10.0), rng.gen_range(0.5..10.0)];
        let at = dual(&lambda);
        let scale = at.residual.iter().map(|r| r.abs()).fold(0.0, f64::max);
        for tau in 0..2 {
            let mut up = lambda;
            let mut down = lambda;
            up[tau] += h;
            down[tau] -= h;
            let fd = (dual(&up).dual_value - dual(&down).dual_value) / (2.0 * h);
            worst = worst.max((fd - at.residual[tau]).abs() / scale);
        }
    }
    outcome(
        worst <= SUBGRADIENT_REL,
        format!("20 price points, worst relative mismatch {:.2e} (limit 1e-2)", worst),
    )
}

fn ev_kkt_residual(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=8);
    let xi = rng.gen_range(0.0..0.5);
    let w = rng.gen_range(1.0..20.0);
    let c = (1.0 - xi) * SLOT_HOURS;
    let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..12.0)).collect();
    let session = EvSession {
        xi,
        weight: w,
        ..ev("r", 0, n, rng.gen_range(0.0..0.95) * c * 22.0 * n as f64)
    };
    let sol = solve_ev(
        &EvSubproblem::new(&session, 0, SLOT_HOURS, &prices),
        &LogUtility::default(),
        &Tolerances::default(),
    );
    let Some(mu) = sol.mu else {
        return f64::INFINITY;
    };
    let mut worst = sol.energy_residual.abs();
    for (price, p) in prices.iter().zip(sol.profile.iter()) {
        let g = w / (1.0 + p) - price - mu * c;
        let violation = if *p <= 1e-12 {
            g.max(0.0)
        } else if *p >= 22.0 - 1e-12 {
            (-g).max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(violation);
    }
    worst
}

fn dso_kkt_residual(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=8);
    let storage = StorageSpec {
        delta_s: rng.gen_range(0.1..=1.0),
        rho: rng.gen_range(0.05..2.0),
        ..reference_storage()
    };
    let x_now = rng.gen_range(60.0..140.0);
    let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..15.0)).collect();
    let sub = DsoSubproblem {
        dso: &REFERENCE_DSO,
        storage: &storage,
        x_now,
        window: TimeGrid::new(0, n, SLOT_HOURS).unwrap(),
        prices: &prices,
    };
    let sol = solve_dso(&sub, &ActiveSet::default(), 1e-6, None).expect("dso solves");
    // Ascent direction of the payoff, written from the cost and tracking terms.
    let c = storage.delta_s * SLOT_HOURS;
    let marginal: Vec<f64> = (0..n)
        .map(|i| {
            let q = sol.p_l[i] - sol.p_s[i];
            (cost(q + 1e-7, &REFERENCE_DSO) - cost(q - 1e-7, &REFERENCE_DSO)) / 2e-7
        })
        .collect();
    let mut devs = Vec::with_capacity(n);
    let mut x = x_now;
    for p in sol.p_s.iter() {
        x -= c * p;
        devs.push(x - storage.x_ref);
    }
    let mut worst = 0.0_f64;
    for i in 0..n {
        let g_l = prices[i] - marginal[i];
        let g_s = marginal[i] + 2.0 * storage.rho * c * devs[i..].iter().sum::<f64>();
        let r_l = (sol.p_l[i] - (sol.p_l[i] + g_l).clamp(REFERENCE_DSO.p_min, REFERENCE_DSO.p_max)).abs();
        let r_s = (sol.p_s[i] - (sol.p_s[i] + g_s).clamp(storage.ps_min, storage.ps_max)).abs();
        worst = worst.max(r_l).max(r_s);
    }
    worst
}

fn a7_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ev_worst = (0..100).map(|_| ev_kkt_residual(&mut rng)).fold(0.0, f64::max);
    let dso_worst = (0..100).map(|_| dso_kkt_residual(&mut rng)).fold(0.0, f64::max);
    outcome(
        ev_worst <= KKT && dso_worst <= KKT,
        format!(
            "100 EV instances worst residual {:.2e}, 100 DSO instances worst residual {:.2e} (limit 1e-4)",
            ev_worst, dso_worst
        ),
    )
}

fn a8_determinism(scenario: &Scenario) -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        write_trace(&mpc::run(scenario).expect("run"), dir.path()).expect("write");
    }
    let identical = ["slots.csv", "evs.csv", "summary.csv"].iter().all(|file| {
        std::fs::read(dirs[0].path().join(file)).unwrap() == std::fs::read(dirs[1].path().join(file)).unwrap()
    });
    outcome(
        identical,
        format!("three trace files byte-identical across two runs: {identical}"),
    )
}

fn main() {
    let scenario = Scenario::reference();
    let start = Instant::now();
    let trace = reference_run();
    let run_seconds = start.elapsed().as_secs_f64();

    let results = [
        ("A1 oracle equivalence", a1_oracle_equivalence()),
        ("A2 driver satisfaction", {
            let mut o = a2_driver_satisfaction(&trace, &scenario);
            o.detail.push_str(&format!(", run {run_seconds:.2} s"));
            o
        }),
        ("A3 dual convergence", a3_dual_convergence(&trace)),
        ("A4 storage smoothing", a4_storage_smoothing(&trace)),
        ("A5 peak shaving", a5_peak_shaving(&trace, &scenario)),
        ("A6 subgradient identity", a6_subgradient()),
        ("A7 KKT suites", a7_kkt()),
        ("A8 determinism", a8_determinism(&scenario)),
    ];

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
