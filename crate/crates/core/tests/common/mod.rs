#![allow(dead_code)]

use evmpc_core::coordinator::{ConstantStep, ConvergenceConfig, Coordinator};
use evmpc_core::ev_agent::LogUtility;
use evmpc_core::model::{DsoSpec, EvSession, StorageSpec, Tolerances};
use evmpc_core::qp::ActiveSet;

pub const SLOT_HOURS: f64 = 0.25;

pub const REFERENCE_DSO: DsoSpec = DsoSpec {
    a: 0.06,
    b: 0.9,
    p_min: 0.0,
    p_max: 100.0,
};

pub fn reference_storage() -> StorageSpec {
    StorageSpec {
        ps_min: -100.0,
        ps_max: 100.0,
        x0: 100.0,
        x_ref: 100.0,
        delta_s: 1.0,
        rho: 1.0,
    }
}

pub fn ev(id: &str, arrival: usize, departure: usize, energy: f64) -> EvSession {
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

pub fn coordinator(eps_balance: f64, k_max: usize) -> Coordinator {
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

/// Log utility written out independently of the library.
pub fn log_utility(p: f64, w: f64) -> f64 {
    w * (1.0 + p).ln()
}

pub fn cost(q: f64, dso: &DsoSpec) -> f64 {
    dso.a * q * q + dso.b * q
}

/// Tracking sum written as a double loop over the cumulative storage trajectory.
pub fn tracking(x_now: f64, p_s: &[f64], storage: &StorageSpec, slot_hours: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..p_s.len() {
        let moved: f64 = (0..=j).map(|i| p_s[i] * storage.delta_s * slot_hours).sum();
        total += (x_now - moved - storage.x_ref).powi(2);
    }
    total
}

/// DSO payoff `sum lambda P_l - C(P_l - P_s) - rho * tracking`.
pub fn dso_payoff(
    prices: &[f64],
    p_l: &[f64],
    p_s: &[f64],
    dso: &DsoSpec,
    storage: &StorageSpec,
    x_now: f64,
    slot_hours: f64,
) -> f64 {
    let market: f64 = (0..prices.len())
        .map(|i| prices[i] * p_l[i] - cost(p_l[i] - p_s[i], dso))
        .sum();
    market - storage.rho * tracking(x_now, p_s, storage, slot_hours)
}
