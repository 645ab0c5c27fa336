//! Price coordination for one time slot. The coordinator broadcasts a price vector,
//! collects one power curve per agent, and moves the prices along the projected
//! anti-gradient of the dual function until supply and demand balance.

use std::fmt::Debug;

use rayon::prelude::*;

use crate::dso_agent::{solve_dso, DsoSolution, DsoSubproblem};
use crate::error::{Error, Result};
use crate::ev_agent::{solve_ev, EvSolution, EvSubproblem, LogUtility};
use crate::model::{DsoSpec, EvSession, PowerProfile, PriceVector, StorageSpec, TimeGrid, Tolerances};
use crate::qp::QpSolver;

/// Step length used at dual iteration `k` (0-based).
pub trait StepSchedule: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn step(&self, gamma: f64, k: usize) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantStep;

impl StepSchedule for ConstantStep {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn step(&self, gamma: f64, _k: usize) -> f64 {
        gamma
    }
}

/// `gamma / sqrt(k + 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiminishingStep;

impl StepSchedule for DiminishingStep {
    fn name(&self) -> &'static str {
        "diminishing"
    }

    fn step(&self, gamma: f64, k: usize) -> f64 {
        gamma / ((k + 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    /// Price units (per kW·slot) per kW of imbalance.
    pub gamma: f64,
    /// kW, max-norm.
    pub eps_balance: f64,
    pub k_max: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            gamma: 0.005,
            eps_balance: 0.1,
            k_max: 2000,
        }
    }
}

/// `max(lambda - gamma * residual, 0)` elementwise.
pub fn update_price(lambda: &PriceVector, residual: &[f64], gamma: f64) -> Result<PriceVector> {
    if lambda.len() != residual.len() {
        return Err(Error::LengthMismatch {
            expected: lambda.len(),
            actual: residual.len(),
        });
    }
    Ok(PriceVector::projected(
        lambda.iter().zip(residual).map(|(l, r)| l - gamma * r),
    ))
}

/// Everything the coordinator needs to clear one slot's market.
#[derive(Debug, Clone, Copy)]
pub struct SlotMarket<'a> {
    pub window: TimeGrid,
    pub evs: &'a [EvSession],
    pub dso: &'a DsoSpec,
    pub storage: &'a StorageSpec,
    pub x_now: f64,
}

#[derive(Debug, Clone)]
pub struct DualIterationState {
    pub k: usize,
    pub lambda: PriceVector,
    /// Sum of EV curves, zero-padded past each departure.
    pub demand: PowerProfile,
    /// DSO delivered power `P_l`.
    pub supply: PowerProfile,
    /// `supply - demand`, the gradient of the dual function.
    pub residual: PowerProfile,
    pub dual_value: f64,
    pub evs: Vec<EvSolution>,
    pub dso: DsoSolution,
}

impl DualIterationState {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Negotiation {
    /// Iterate at which the loop stopped; its agent solutions are the recovered primal.
    pub state: DualIterationState,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug)]
pub struct Coordinator {
    pub convergence: ConvergenceConfig,
    pub tolerances: Tolerances,
    pub utility: LogUtility,
    schedule: Box<dyn StepSchedule>,
    qp_solver: Box<dyn QpSolver>,
}

impl Coordinator {
    pub fn new(
        convergence: ConvergenceConfig,
        tolerances: Tolerances,
        utility: LogUtility,
        schedule: Box<dyn StepSchedule>,
        qp_solver: Box<dyn QpSolver>,
    ) -> Self {
        Self {
            convergence,
            tolerances,
            utility,
            schedule,
            qp_solver,
        }
    }

    pub fn schedule(&self) -> &dyn StepSchedule {
        self.schedule.as_ref()
    }

    pub fn qp_solver(&self) -> &dyn QpSolver {
        self.qp_solver.as_ref()
    }

    /// Solves every agent at `lambda` and assembles `D(lambda)` with its gradient.
    pub fn evaluate_dual(
        &self,
        market: &SlotMarket<'_>,
        lambda: &PriceVector,
        dso_warm_start: Option<&[f64]>,
    ) -> Result<DualIterationState> {
        let n = market.window.len;
        if lambda.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: lambda.len(),
            });
        }
        let (t, hours) = (market.window.t, market.window.slot_hours);

        let evs: Vec<EvSolution> = market
            .evs
            .par_iter()
            .map(|ev| {
                solve_ev(
                    &EvSubproblem::new(ev, t, hours, lambda),
                    &self.utility,
                    &self.tolerances,
                )
            })
            .collect();

        let dso = solve_dso(
            &DsoSubproblem {
                dso: market.dso,
                storage: market.storage,
                x_now: market.x_now,
                window: market.window,
                prices: lambda,
            },
            self.qp_solver.as_ref(),
            self.tolerances.kkt,
            dso_warm_start,
        )?;

        let mut demand = vec![0.0; n];
        for sol in &evs {
            for (d, p) in demand.iter_mut().zip(sol.profile.iter()) {
                *d += p;
            }
        }
        let residual = dso.p_l.iter().zip(&demand).map(|(s, d)| s - d).collect();
        let dual_value = evs.iter().map(|s| s.objective).sum::<f64>() + dso.objective;

        Ok(DualIterationState {
            k: 0,
            lambda: lambda.clone(),
            demand: PowerProfile(demand),
            supply: dso.p_l.clone(),
            residual: PowerProfile(residual),
            dual_value,
            evs,
            dso,
        })
    }

    /// Runs the price loop from a flat warm-start price until the balance residual
    /// drops below `eps_balance` or `k_max` updates have been made.
    pub fn negotiate_slot(&self, market: &SlotMarket<'_>, warm_start_price: f64) -> Result<Negotiation> {
        let cfg = &self.convergence;
        let lambda = PriceVector::constant(warm_start_price, market.window.len)?;
        let mut state = self.evaluate_dual(market, &lambda, None)?;
        let mut k = 0;
        while state.max_residual() > cfg.eps_balance && k < cfg.k_max {
            let step = self.schedule.step(cfg.gamma, k);
            let next = update_price(&state.lambda, &state.residual, step)?;
            let warm = state.dso.stacked();
            k += 1;
            state = self.evaluate_dual(market, &next, Some(&warm))?;
            state.k = k;
        }
        let converged = state.max_residual() <= cfg.eps_balance;
        Ok(Negotiation {
            state,
            iterations: k,
            converged,
        })
    }
}
