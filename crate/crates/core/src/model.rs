//! Domain types shared by the agents, the coordinator and the receding-horizon driver.
//!
//! Units: powers in kW, energies in kWh, slot durations in hours. Prices cross the
//! public boundary (scenario files, traces) in €cent/kWh; inside the market they are
//! carried per kW·slot, i.e. multiplied by the slot duration, so that the price term
//! of every agent objective is simply `price * power`.

use std::ops::{Deref, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Converts a user-facing price in €cent/kWh to the market's per kW·slot unit.
pub fn price_to_internal(per_kwh: f64, slot_hours: f64) -> f64 {
    per_kwh * slot_hours
}

/// Inverse of [`price_to_internal`].
pub fn price_to_per_kwh(internal: f64, slot_hours: f64) -> f64 {
    internal / slot_hours
}

/// The prediction window `{t, t+1, ..., t+len-1}` seen from slot `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t: usize,
    pub len: usize,
    pub slot_hours: f64,
}

impl TimeGrid {
    pub fn new(t: usize, len: usize, slot_hours: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("window must contain at least one slot".into()));
        }
        if !(slot_hours > 0.0 && slot_hours.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "slot duration must be positive, got {slot_hours} h"
            )));
        }
        Ok(Self { t, len, slot_hours })
    }

    /// Absolute slot indices covered by the window.
    pub fn slots(&self) -> Range<usize> {
        self.t..self.t + self.len
    }

    /// Last slot index (inclusive).
    pub fn end(&self) -> usize {
        self.t + self.len - 1
    }
}

/// Numerical tolerances shared by the agent solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed terminal energy error of an EV plan, kWh.
    #[serde(default = "Tolerances::default_energy")]
    pub energy: f64,
    /// Allowed projected stationarity violation.
    #[serde(default = "Tolerances::default_kkt")]
    pub kkt: f64,
}

impl Tolerances {
    fn default_energy() -> f64 {
        1e-6
    }

    fn default_kkt() -> f64 {
        1e-6
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            energy: Self::default_energy(),
            kkt: Self::default_kkt(),
        }
    }
}

/// One vehicle's charging session. `energy` is the SOC error: the energy the battery
/// still has to absorb before `departure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvSession {
    pub id: String,
    pub arrival: usize,
    pub departure: usize,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
    pub weight: f64,
    #[serde(default)]
    pub xi: f64,
    pub energy: f64,
}

impl EvSession {
    /// Energy stored per kW drawn during one slot, `(1 - xi) * T_c`.
    pub fn energy_per_kw_slot(&self, slot_hours: f64) -> f64 {
        (1.0 - self.xi) * slot_hours
    }

    /// Upper bound on the energy deliverable in `slots` slots.
    pub fn max_deliverable(&self, slots: usize, slot_hours: f64) -> f64 {
        self.energy_per_kw_slot(slot_hours) * self.p_max * slots as f64
    }

    /// Slots left before departure as seen from slot `t`.
    pub fn remaining_slots(&self, t: usize) -> usize {
        self.departure.saturating_sub(t)
    }

    /// SOC error after drawing `power` for one slot.
    pub fn advance(&self, power: f64, slot_hours: f64) -> f64 {
        self.energy - self.energy_per_kw_slot(slot_hours) * power
    }

    fn violations(&self, into: &mut Vec<Violation>, at: &str) {
        let mut push = |message: String| {
            into.push(Violation {
                path: format!("{at} ({})", self.id),
                message,
            })
        };
        if self.departure < self.arrival {
            push("empty charging window".into());
        }
        if !(self.p_min >= 0.0 && self.p_min <= self.p_max) {
            push(format!(
                "power bounds must satisfy 0 <= p_min <= p_max (got [{}, {}])",
                self.p_min, self.p_max
            ));
        }
        if !(self.energy >= 0.0) {
            push(format!("soc error must be nonnegative (got {})", self.energy));
        }
        if !(0.0..1.0).contains(&self.xi) {
            push(format!("xi must lie in [0, 1) (got {})", self.xi));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            push(format!("utility weight must be positive (got {})", self.weight));
        }
    }
}

/// Quadratic generation cost `a q^2 + b q` and the bounds on delivered power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsoSpec {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
}

/// Storage bounds and SOC tracking target. Positive power discharges toward the station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub ps_min: f64,
    pub ps_max: f64,
    pub x0: f64,
    pub x_ref: f64,
    #[serde(default = "one")]
    pub delta_s: f64,
    /// Weight on the SOC tracking penalty.
    #[serde(default = "one")]
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

impl StorageSpec {
    /// A storage element that can neither charge nor discharge.
    pub fn disabled() -> Self {
        Self {
            ps_min: 0.0,
            ps_max: 0.0,
            x0: 0.0,
            x_ref: 0.0,
            delta_s: 1.0,
            rho: 1.0,
        }
    }
}

/// Nonnegative price vector over the current window, per kW·slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "price {bad} is not a finite nonnegative value"
            )));
        }
        Ok(Self(values))
    }

    pub fn constant(value: f64, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    /// Builds a price vector by clamping every entry at zero.
    pub fn projected(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PriceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-slot power sequence over a window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerProfile(pub Vec<f64>);

impl PowerProfile {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Extends with zeros up to `len` (EVs departing mid-window draw nothing afterwards).
    pub fn padded(mut self, len: usize) -> Self {
        if self.0.len() < len {
            self.0.resize(len, 0.0);
        }
        self
    }

    pub fn first(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Deref for PowerProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Applied power and remaining SOC error of one EV during one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EvSample {
    pub id: String,
    pub power: f64,
    pub soc_error: f64,
}

/// Closed-loop outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    /// €cent/kWh.
    pub price_applied: f64,
    pub demand_total: f64,
    pub p_l: f64,
    pub p_s: f64,
    /// Storage energy at the end of the slot.
    pub x_s: f64,
    pub per_ev: Vec<EvSample>,
    pub iterations: usize,
    /// Max-norm balance residual of the final market iterate, kW.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Validation(
                self.violations.iter().map(ToString::to_string).collect(),
            ))
        }
    }
}

/// Checks every type invariant of a parsed scenario. An empty report means well-formed.
pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |path: &str, message: String| {
        out.push(Violation {
            path: path.to_string(),
            message,
        })
    };

    if i64::try_from(scenario.seed).is_err() {
        push(
            "seed",
            format!("seed must not exceed {} (got {})", i64::MAX, scenario.seed),
        );
    }

    let grid = &scenario.grid;
    if grid.num_slots == 0 {
        push("grid.num_slots", "horizon must contain at least one slot".into());
    }
    if !(grid.slot_minutes > 0.0 && grid.slot_minutes.is_finite()) {
        push(
            "grid.slot_minutes",
            format!("slot duration must be positive (got {})", grid.slot_minutes),
        );
    }

    let dso = &scenario.dso;
    if !(dso.a > 0.0) {
        push("dso.a", format!("cost not strictly convex (a = {})", dso.a));
    }
    if !dso.b.is_finite() {
        push("dso.b", "linear cost coefficient must be finite".into());
    }
    if !(dso.p_min <= dso.p_max) {
        push(
            "dso",
            format!("generation bounds inverted ([{}, {}])", dso.p_min, dso.p_max),
        );
    }

    if let Some(storage) = &scenario.storage {
        if !(storage.ps_min <= 0.0 && storage.ps_max >= 0.0) {
            push(
                "storage",
                format!(
                    "storage power bounds must bracket zero (got [{}, {}])",
                    storage.ps_min, storage.ps_max
                ),
            );
        }
        if !(storage.x0 >= 0.0) {
            push(
                "storage.x0",
                format!("stored energy must be nonnegative (got {})", storage.x0),
            );
        }
        if !(storage.x_ref >= 0.0) {
            push(
                "storage.x_ref",
                format!("reference energy must be nonnegative (got {})", storage.x_ref),
            );
        }
        if !(storage.delta_s > 0.0 && storage.delta_s <= 1.0) {
            push(
                "storage.delta_s",
                format!("throughput coefficient must lie in (0, 1] (got {})", storage.delta_s),
            );
        }
        if !(storage.rho > 0.0) {
            push(
                "storage.rho",
                format!("tracking weight must be positive (got {})", storage.rho),
            );
        }
    }

    if !(scenario.market.initial_price >= 0.0) {
        push("market.initial_price", "initial price must be nonnegative".into());
    }
    if !(scenario.market.utility_offset > 0.0) {
        push("market.utility_offset", "utility offset must be positive".into());
    }

    let solver = &scenario.solver;
    if !(solver.gamma > 0.0) {
        push(
            "solver.gamma",
            format!("step size must be positive (got {})", solver.gamma),
        );
    }
    if !(solver.eps_balance > 0.0) {
        push("solver.eps_balance", "balance tolerance must be positive".into());
    }
    if solver.k_max == 0 {
        push("solver.k_max", "iteration cap must be at least 1".into());
    }
    if !(solver.tolerances.energy > 0.0 && solver.tolerances.kkt > 0.0) {
        push("solver.tolerances", "tolerances must be positive".into());
    }

    let grid_ok = out.iter().all(|v| !v.path.starts_with("grid"));
    let before = out.len();
    if let Some(generator) = &scenario.generator {
        generator.violations(&mut out);
    }
    // Generated sessions can only be drawn from a well-formed grid and generator.
    let sessions = if grid_ok && out.len() == before {
        scenario.sessions()
    } else {
        scenario.evs.clone()
    };

    for (i, ev) in sessions.iter().enumerate() {
        let at = format!("evs[{i}]");
        ev.violations(&mut out, &at);
        if ev.departure > scenario.grid.num_slots {
            out.push(Violation {
                path: format!("{at} ({})", ev.id),
                message: format!("departure {} is after the end of the horizon", ev.departure),
            });
        }
    }

    let mut ids: Vec<&str> = sessions.iter().map(|ev| ev.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(dup) = ids.windows(2).find(|w| w[0] == w[1]) {
        out.push(Violation {
            path: "evs".into(),
            message: format!("duplicate EV id `{}`", dup[0]),
        });
    }

    ValidationReport { violations: out }
}
