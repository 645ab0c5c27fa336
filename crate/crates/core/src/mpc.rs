//! Receding-horizon driver. Each slot it admits arrivals, asks the configured
//! charging policy for the slot's powers, applies only the first sample, and
//! advances SOC errors and the storage ledger.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;

use crate::coordinator::{Coordinator, SlotMarket};
use crate::error::Result;
use crate::model::{
    price_to_internal, price_to_per_kwh, DsoSpec, EvSample, EvSession, SlotRecord, StorageSpec, TimeGrid,
};
use crate::registry::StrategyRegistry;
use crate::scenario::Scenario;
use crate::trace::{EvOutcome, SimulationTrace};

/// Window length from slot `t`: up to the latest departure among active EVs, or a
/// single slot when nobody is charging.
pub fn compute_window(active: &[EvSession], t: usize) -> usize {
    active.iter().map(|ev| ev.remaining_slots(t)).max().unwrap_or(0).max(1)
}

/// Read-only view of the plant and market handed to a policy for one slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotContext<'a> {
    pub t: usize,
    pub slot_hours: f64,
    pub active: &'a [EvSession],
    pub dso: &'a DsoSpec,
    pub storage: &'a StorageSpec,
    pub x_s: f64,
    /// Warm-start price per kW·slot.
    pub last_price: f64,
    pub coordinator: &'a Coordinator,
}

/// Powers a policy applies during one slot, aligned with `SlotContext::active`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub ev_powers: Vec<f64>,
    pub p_l: f64,
    pub p_s: f64,
    /// Per kW·slot.
    pub price: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub trait ChargingPolicy: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn dispatch(&self, ctx: &SlotContext<'_>) -> Result<Dispatch>;
}

/// Clears a price-coordinated market over the window and applies the first sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarketPolicy;

impl ChargingPolicy for MarketPolicy {
    fn name(&self) -> &'static str {
        "market"
    }

    fn dispatch(&self, ctx: &SlotContext<'_>) -> Result<Dispatch> {
        let window = TimeGrid::new(ctx.t, compute_window(ctx.active, ctx.t), ctx.slot_hours)?;
        let market = SlotMarket {
            window,
            evs: ctx.active,
            dso: ctx.dso,
            storage: ctx.storage,
            x_now: ctx.x_s,
        };
        let outcome = ctx.coordinator.negotiate_slot(&market, ctx.last_price)?;
        let state = &outcome.state;
        Ok(Dispatch {
            ev_powers: state.evs.iter().map(|s| s.profile.first()).collect(),
            p_l: state.supply.first(),
            p_s: state.dso.p_s.first(),
            price: state.lambda[0],
            iterations: outcome.iterations,
            residual: state.max_residual(),
            converged: outcome.converged,
        })
    }
}

/// Every plugged-in EV draws its maximum power, clipped so it never overshoots its
/// requirement. The reported price is the marginal generation cost of that load.
#[derive(Debug, Clone, Copy, Default)]
pub struct UncontrolledPolicy;

impl ChargingPolicy for UncontrolledPolicy {
    fn name(&self) -> &'static str {
        "uncontrolled"
    }

    fn dispatch(&self, ctx: &SlotContext<'_>) -> Result<Dispatch> {
        let ev_powers: Vec<f64> = ctx
            .active
            .iter()
            .map(|ev| ev.p_max.min(ev.energy / ev.energy_per_kw_slot(ctx.slot_hours)))
            .collect();
        let demand: f64 = ev_powers.iter().sum();
        Ok(Dispatch {
            ev_powers,
            p_l: demand,
            p_s: 0.0,
            price: (2.0 * ctx.dso.a * demand + ctx.dso.b).max(0.0),
            iterations: 0,
            residual: 0.0,
            converged: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimulationState {
    pub t: usize,
    pub active: Vec<EvSession>,
    /// Not yet arrived, ordered by arrival.
    pub pending: VecDeque<EvSession>,
    pub x_s: f64,
    /// Warm-start price per kW·slot.
    pub last_price: f64,
    pub trace: Vec<SlotRecord>,
    pub outcomes: Vec<EvOutcome>,
    required: BTreeMap<String, f64>,
}

impl SimulationState {
    fn retire(&mut self, ev: EvSession, left_at: usize) {
        let required = self.required.get(&ev.id).copied().unwrap_or(ev.energy);
        self.outcomes.push(EvOutcome {
            id: ev.id,
            arrival: ev.arrival,
            departure: ev.departure,
            required,
            remaining: ev.energy,
            left_at,
        });
    }
}

#[derive(Debug)]
pub struct Simulator {
    pub slot_hours: f64,
    pub num_slots: usize,
    pub dso: DsoSpec,
    pub storage: StorageSpec,
    /// Per kW·slot.
    pub initial_price: f64,
    pub coordinator: Coordinator,
    sessions: Vec<EvSession>,
    policy: Box<dyn ChargingPolicy>,
}

impl Simulator {
    /// Builds a simulator for a validated scenario with the named charging policy.
    pub fn from_scenario(scenario: &Scenario, policy: &str, registry: &StrategyRegistry) -> Result<Self> {
        scenario.validate()?;
        let slot_hours = scenario.grid.slot_hours();
        Ok(Self {
            slot_hours,
            num_slots: scenario.grid.num_slots,
            dso: scenario.dso,
            storage: scenario.storage_or_disabled(),
            initial_price: price_to_internal(scenario.market.initial_price, slot_hours),
            coordinator: scenario.coordinator(registry)?,
            sessions: scenario.sessions(),
            policy: registry.policy(policy)?,
        })
    }

    pub fn policy(&self) -> &dyn ChargingPolicy {
        self.policy.as_ref()
    }

    pub fn initial_state(&self) -> SimulationState {
        let mut pending: Vec<EvSession> = self.sessions.clone();
        pending.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.id.cmp(&b.id)));
        SimulationState {
            t: 0,
            active: Vec::new(),
            pending: pending.into(),
            x_s: self.storage.x0,
            last_price: self.initial_price,
            trace: Vec::new(),
            outcomes: Vec::new(),
            required: BTreeMap::new(),
        }
    }

    fn energy_floor(&self) -> f64 {
        self.coordinator.tolerances.energy
    }

    /// Advances the simulation by one slot and returns that slot's record (also
    /// appended to `state.trace`).
    pub fn step(&self, state: &mut SimulationState) -> Result<SlotRecord> {
        let t = state.t;
        while state.pending.front().is_some_and(|ev| ev.arrival <= t) {
            let ev = state.pending.pop_front().expect("front checked");
            state.required.insert(ev.id.clone(), ev.energy);
            if ev.departure > t && ev.energy > self.energy_floor() {
                state.active.push(ev);
            } else {
                state.retire(ev, t);
            }
        }

        let dispatch = self.policy.dispatch(&SlotContext {
            t,
            slot_hours: self.slot_hours,
            active: &state.active,
            dso: &self.dso,
            storage: &self.storage,
            x_s: state.x_s,
            last_price: state.last_price,
            coordinator: &self.coordinator,
        })?;

        let mut per_ev = Vec::with_capacity(state.active.len());
        for (ev, &power) in state.active.iter_mut().zip(&dispatch.ev_powers) {
            ev.energy = ev.advance(power, self.slot_hours).max(0.0);
            per_ev.push(EvSample {
                id: ev.id.clone(),
                power,
                soc_error: ev.energy,
            });
        }
        state.x_s -= dispatch.p_s * self.storage.delta_s * self.slot_hours;
        state.last_price = dispatch.price;

        let record = SlotRecord {
            slot: t,
            price_applied: price_to_per_kwh(dispatch.price, self.slot_hours),
            demand_total: dispatch.ev_powers.iter().sum(),
            p_l: dispatch.p_l,
            p_s: dispatch.p_s,
            x_s: state.x_s,
            per_ev,
            iterations: dispatch.iterations,
            residual: dispatch.residual,
            converged: dispatch.converged,
        };

        let floor = self.energy_floor();
        let (leaving, staying): (Vec<_>, Vec<_>) = std::mem::take(&mut state.active)
            .into_iter()
            .partition(|ev| ev.energy <= floor || ev.departure <= t + 1);
        state.active = staying;
        for ev in leaving {
            state.retire(ev, t + 1);
        }

        state.trace.push(record.clone());
        state.t += 1;
        Ok(record)
    }

    pub fn finish(&self, mut state: SimulationState) -> SimulationTrace {
        let end = state.t;
        for ev in std::mem::take(&mut state.active) {
            state.retire(ev, end);
        }
        for ev in std::mem::take(&mut state.pending) {
            state.required.insert(ev.id.clone(), ev.energy);
            state.retire(ev, end);
        }
        SimulationTrace::new(self.slot_hours, state.trace, state.outcomes)
    }

    pub fn run(&self) -> Result<SimulationTrace> {
        let mut state = self.initial_state();
        for _ in 0..self.num_slots {
            self.step(&mut state)?;
        }
        Ok(self.finish(state))
    }
}

/// Price-coordinated receding-horizon run over the whole scenario.
pub fn run(scenario: &Scenario) -> Result<SimulationTrace> {
    Simulator::from_scenario(scenario, "market", &StrategyRegistry::default())?.run()
}

/// Baseline where every EV charges at full power from arrival.
pub fn simulate_uncontrolled(scenario: &Scenario) -> Result<SimulationTrace> {
    Simulator::from_scenario(scenario, "uncontrolled", &StrategyRegistry::default())?.run()
}
