mod common;

use common::{coordinator, cost, ev, log_utility, reference_storage, tracking, SLOT_HOURS, REFERENCE_DSO};
use evmpc_core::coordinator::SlotMarket;
use evmpc_core::ev_agent::LogUtility;
use evmpc_core::model::{EvSession, PriceVector, StorageSpec, TimeGrid, Tolerances};
use evmpc_core::oracle::{solve_central, CentralProblem, OracleCap};
use proptest::prelude::*;

fn market<'a>(evs: &'a [EvSession], storage: &'a StorageSpec, n: usize) -> SlotMarket<'a> {
    SlotMarket {
        window: TimeGrid::new(0, n, SLOT_HOURS).unwrap(),
        evs,
        dso: &REFERENCE_DSO,
        storage,
        x_now: storage.x0,
    }
}

fn central(evs: Vec<EvSession>, n: usize) -> CentralProblem {
    let storage = reference_storage();
    CentralProblem {
        evs,
        dso: REFERENCE_DSO,
        storage,
        x_now: storage.x0,
        window: TimeGrid::new(0, n, SLOT_HOURS).unwrap(),
    }
}

/// A single EV that can only meet its requirement at full power.
fn forced_ev() -> EvSession {
    ev("forced", 0, 1, 22.0 * SLOT_HOURS)
}

#[test]
fn forced_ev_clears_at_analytic_price() {
    // Supply responds as P_l = (lambda - b) / 2a + lambda / (2 (dT)^2); clearing at 22 kW.
    let expected: f64 = (22.0 + 0.9 / 0.12) / (1.0 / 0.12 + 8.0);
    assert!((expected - 1.806122).abs() < 1e-6);
    let storage = reference_storage();
    let evs = [forced_ev()];
    let coord = coordinator(1e-7, 100_000);
    let result = coord.negotiate_slot(&market(&evs, &storage, 1), 4.0).unwrap();
    assert!(result.converged);
    assert!(
        (result.state.lambda[0] - expected).abs() < 1e-6,
        "{}",
        result.state.lambda[0]
    );
    assert!((result.state.dso.p_s[0] - 8.0 * expected).abs() < 1e-4);
}

#[test]
fn forced_ev_oracle_welfare_matches_line_search() {
    let storage = reference_storage();
    let problem = central(vec![forced_ev()], 1);
    let sol = solve_central(
        &problem,
        &LogUtility::default(),
        &Tolerances::default(),
        OracleCap::default(),
    )
    .unwrap();
    assert!((sol.ev_profiles[0][0] - 22.0).abs() < 1e-9);
    let welfare_at = |p_s: f64| {
        log_utility(22.0, 10.0) - cost(22.0 - p_s, &REFERENCE_DSO) - tracking(100.0, &[p_s], &storage, SLOT_HOURS)
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=20_000 {
        let p_s = -100.0 + i as f64 * 0.01;
        let w = welfare_at(p_s);
        if w > best.0 {
            best = (w, p_s);
        }
    }
    assert!((sol.p_s[0] - best.1).abs() <= 0.01, "{} vs {}", sol.p_s[0], best.1);
    assert!((sol.welfare - best.0).abs() <= 1e-6 * best.0.abs());
}

#[test]
fn empty_oracle_instance_has_zero_welfare() {
    let mut problem = central(Vec::new(), 3);
    problem.dso.b = 0.0;
    let sol = solve_central(
        &problem,
        &LogUtility::default(),
        &Tolerances::default(),
        OracleCap::default(),
    )
    .unwrap();
    assert!(sol.welfare.abs() < 1e-12);
    assert!(sol.p_s.iter().chain(&sol.p_l).all(|p| p.abs() < 1e-9));
}

#[test]
fn oracle_reports_unreachable_requirements() {
    let problem = central(vec![ev("greedy", 0, 1, 20.0)], 1);
    let sol = solve_central(
        &problem,
        &LogUtility::default(),
        &Tolerances::default(),
        OracleCap::default(),
    )
    .unwrap();
    assert_eq!(sol.infeasible, vec!["greedy".to_string()]);
    assert_eq!(sol.ev_profiles[0], vec![22.0]);
}

#[test]
fn oracle_beats_decentralized_on_two_evs() {
    let evs = vec![ev("a", 0, 2, 6.0), ev("b", 0, 1, 2.5)];
    let problem = central(evs.clone(), 2);
    let sol = solve_central(
        &problem,
        &LogUtility::default(),
        &Tolerances::default(),
        OracleCap::default(),
    )
    .unwrap();
    let storage = reference_storage();
    let coord = coordinator(0.1, 2000);
    let result = coord.negotiate_slot(&market(&evs, &storage, 2), 4.0).unwrap();
    let profiles: Vec<Vec<f64>> = result.state.evs.iter().map(|s| s.profile.clone().padded(2).0).collect();
    let decentralized = problem.welfare(&LogUtility::default(), &profiles, &result.state.dso.p_s);
    assert!(sol.welfare >= decentralized - 1e-9);
    assert!((sol.welfare - decentralized).abs() <= 0.01 * sol.welfare.abs());
}

fn instance() -> impl Strategy<Value = (Vec<EvSession>, usize)> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(r, n)| {
        let sessions = prop::collection::vec((1usize..=n, 0.0f64..0.9), r).prop_map(move |raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, (stay, fill))| ev(&format!("ev{i}"), 0, stay, fill * 22.0 * SLOT_HOURS * stay as f64))
                .collect::<Vec<_>>()
        });
        (sessions, Just(n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// The dual function bounds the welfare of every feasible allocation from above.
    #[test]
    fn weak_duality((evs, n) in instance(), prices in prop::collection::vec(0.0f64..10.0, 3)) {
        let storage = reference_storage();
        let coord = coordinator(0.1, 2000);
        let lambda = PriceVector::new(prices[..n].to_vec()).unwrap();
        let dual = coord.evaluate_dual(&market(&evs, &storage, n), &lambda, None).unwrap().dual_value;
        let problem = central(evs, n);
        let primal = solve_central(&problem, &LogUtility::default(), &Tolerances::default(), OracleCap::default()).unwrap();
        prop_assert!(dual >= primal.welfare - 1e-6, "dual {dual} < welfare {}", primal.welfare);
    }

    /// The residual is a subgradient of the dual function: D(mu) >= D(lambda) + g'(mu - lambda).
    #[test]
    fn residual_supports_the_dual(
        (evs, n) in instance(),
        a in prop::collection::vec(0.0f64..10.0, 3),
        b in prop::collection::vec(0.0f64..10.0, 3),
    ) {
        let storage = reference_storage();
        let coord = coordinator(0.1, 2000);
        let m = market(&evs, &storage, n);
        let at = coord.evaluate_dual(&m, &PriceVector::new(a[..n].to_vec()).unwrap(), None).unwrap();
        let other = coord.evaluate_dual(&m, &PriceVector::new(b[..n].to_vec()).unwrap(), None).unwrap();
        let linear: f64 = (0..n).map(|i| at.residual[i] * (b[i] - a[i])).sum();
        prop_assert!(other.dual_value >= at.dual_value + linear - 1e-5 * at.dual_value.abs().max(1.0));
    }

    #[test]
    fn oracle_dominates_price_loop((evs, n) in instance()) {
        let storage = reference_storage();
        let coord = coordinator(0.1, 2000);
        let result = coord.negotiate_slot(&market(&evs, &storage, n), 4.0).unwrap();
        prop_assert!(result.converged);
        let problem = central(evs, n);
        let sol = solve_central(&problem, &LogUtility::default(), &Tolerances::default(), OracleCap::default()).unwrap();
        let profiles: Vec<Vec<f64>> = result.state.evs.iter().map(|s| s.profile.clone().padded(n).0).collect();
        let decentralized = problem.welfare(&LogUtility::default(), &profiles, &result.state.dso.p_s);
        prop_assert!(sol.welfare >= decentralized - 1e-6);
    }
}
