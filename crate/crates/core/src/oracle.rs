//! Centralized welfare maximization on small instances, used as ground truth for
//! the decentralized price loop.
//!
//! The balance constraint is eliminated by substitution (`P_l = sum_r p_r`), leaving
//! EV powers and storage powers. Each EV's feasible set is a box intersected with its
//! energy hyperplane, whose Euclidean projection is computed exactly, so the reduced
//! problem is solved by accelerated projected gradient ascent with restarts.

use crate::coordinator::{Coordinator, SlotMarket};
use crate::dso_agent::{generation_cost, storage_tracking_penalty};
use crate::error::{Error, Result};
use crate::ev_agent::LogUtility;
use crate::model::{DsoSpec, EvSession, StorageSpec, TimeGrid, Tolerances};
use crate::mpc::compute_window;
use crate::registry::StrategyRegistry;
use crate::scenario::Scenario;

const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCap {
    pub slots: usize,
    pub evs: usize,
}

impl Default for OracleCap {
    fn default() -> Self {
        Self { slots: 6, evs: 4 }
    }
}

/// Global problem at slot `window.t`. Every EV is plugged in at `window.t` and
/// departs within the window.
#[derive(Debug, Clone)]
pub struct CentralProblem {
    pub evs: Vec<EvSession>,
    pub dso: DsoSpec,
    pub storage: StorageSpec,
    pub x_now: f64,
    pub window: TimeGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    /// One window-length profile per EV, zero past departure.
    pub ev_profiles: Vec<Vec<f64>>,
    pub p_l: Vec<f64>,
    pub p_s: Vec<f64>,
    pub welfare: f64,
    /// Ids whose requirement is out of reach; they are held at full power.
    pub infeasible: Vec<String>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl CentralProblem {
    fn slots_of(&self, ev: &EvSession) -> usize {
        ev.remaining_slots(self.window.t).min(self.window.len)
    }

    /// Global welfare of EV profiles and storage powers with `P_l = sum_r p_r`.
    pub fn welfare(&self, utility: &LogUtility, ev_profiles: &[Vec<f64>], p_s: &[f64]) -> f64 {
        let n = self.window.len;
        let mut delivered = vec![0.0; n];
        let mut total_utility = 0.0;
        for (ev, profile) in self.evs.iter().zip(ev_profiles) {
            for (tau, p) in profile.iter().enumerate() {
                delivered[tau] += p;
                total_utility += ev.weight * (utility.offset + p).ln();
            }
        }
        let cost: f64 = delivered
            .iter()
            .zip(p_s)
            .map(|(l, s)| generation_cost(l - s, &self.dso))
            .sum();
        total_utility
            - cost
            - self.storage.rho * storage_tracking_penalty(self.x_now, p_s, &self.storage, self.window.slot_hours)
    }
}

/// Euclidean projection of `y` onto `{lo <= p <= hi, sum p = total}`.
fn project_capped_simplex(y: &mut [f64], lo: f64, hi: f64, total: f64) {
    // sum clamp(y - shift, lo, hi) is nonincreasing in shift.
    let sum_at = |shift: f64| y.iter().map(|v| (v - shift).clamp(lo, hi)).sum::<f64>();
    let mut low = y.iter().copied().fold(f64::INFINITY, f64::min) - hi;
    let mut high = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) - lo;
    for _ in 0..200 {
        let mid = 0.5 * (low + high);
        if mid <= low || mid >= high {
            break;
        }
        if sum_at(mid) > total {
            low = mid;
        } else {
            high = mid;
        }
    }
    let mut shift = 0.5 * (low + high);
    // Exact on the free coordinates: the sum is affine in `shift` between breakpoints.
    let free = y.iter().filter(|v| {
        let p = *v - shift;
        p > lo && p < hi
    });
    let count = free.count();
    if count > 0 {
        shift += (sum_at(shift) - total) / count as f64;
    }
    for v in y.iter_mut() {
        *v = (*v - shift).clamp(lo, hi);
    }
}

struct Layout {
    /// (offset, slots) of each EV's block in the stacked variable vector.
    blocks: Vec<(usize, usize)>,
    fixed: Vec<bool>,
    storage_offset: usize,
    dim: usize,
}

pub fn solve_central(
    problem: &CentralProblem,
    utility: &LogUtility,
    tol: &Tolerances,
    cap: OracleCap,
) -> Result<CentralSolution> {
    let n = problem.window.len;
    if n > cap.slots || problem.evs.len() > cap.evs {
        return Err(Error::OracleCap(format!(
            "{} slots and {} EVs exceed the cap of {} slots and {} EVs",
            n,
            problem.evs.len(),
            cap.slots,
            cap.evs
        )));
    }
    if problem
        .evs
        .iter()
        .any(|ev| ev.arrival > problem.window.t || ev.departure > problem.window.t + n)
    {
        return Err(Error::InvalidInput(
            "every EV must be plugged in and depart within the window".into(),
        ));
    }
    let max_draw: f64 = problem.evs.iter().map(|ev| ev.p_max).sum();
    let min_draw: f64 = problem.evs.iter().map(|ev| ev.p_min).sum();
    if max_draw > problem.dso.p_max || min_draw < problem.dso.p_min {
        return Err(Error::OracleCap(
            "generation bounds could bind; the substituted problem would not be exact".into(),
        ));
    }

    let hours = problem.window.slot_hours;
    let mut blocks = Vec::with_capacity(problem.evs.len());
    let mut fixed = Vec::with_capacity(problem.evs.len());
    let mut infeasible = Vec::new();
    let mut offset = 0;
    for ev in &problem.evs {
        let slots = problem.slots_of(ev);
        let per_kw = ev.energy_per_kw_slot(hours);
        let reachable = ev.energy <= per_kw * ev.p_max * slots as f64 + tol.energy
            && ev.energy >= per_kw * ev.p_min * slots as f64 - tol.energy
            && !(slots == 0 && ev.energy > tol.energy);
        if !reachable {
            infeasible.push(ev.id.clone());
        }
        fixed.push(!reachable);
        blocks.push((offset, slots));
        offset += slots;
    }
    let layout = Layout {
        blocks,
        fixed,
        storage_offset: offset,
        dim: offset + n,
    };

    let project = |z: &mut [f64]| {
        for (ev, (&(off, slots), &is_fixed)) in problem.evs.iter().zip(layout.blocks.iter().zip(&layout.fixed)) {
            let block = &mut z[off..off + slots];
            if is_fixed {
                block.fill(ev.p_max);
            } else {
                project_capped_simplex(block, ev.p_min, ev.p_max, ev.energy / ev.energy_per_kw_slot(hours));
            }
        }
        for p in &mut z[layout.storage_offset..] {
            *p = p.clamp(problem.storage.ps_min, problem.storage.ps_max);
        }
    };

    let (a, b) = (problem.dso.a, problem.dso.b);
    let c = problem.storage.delta_s * hours;
    let rho = problem.storage.rho;
    // Ascent direction of the welfare.
    let gradient = |z: &[f64]| -> Vec<f64> {
        let mut delivered = vec![0.0; n];
        for &(off, slots) in &layout.blocks {
            for tau in 0..slots {
                delivered[tau] += z[off + tau];
            }
        }
        let p_s = &z[layout.storage_offset..];
        let marginal_cost: Vec<f64> = (0..n).map(|tau| 2.0 * a * (delivered[tau] - p_s[tau]) + b).collect();
        let mut g = vec![0.0; layout.dim];
        for (ev, &(off, slots)) in problem.evs.iter().zip(&layout.blocks) {
            for tau in 0..slots {
                g[off + tau] = utility.marginal(z[off + tau], ev.weight) - marginal_cost[tau];
            }
        }
        // d/dP_s,i of -rho sum_j (x - c S_j - x_ref)^2 = 2 rho c sum_{j>=i} dev_j
        let mut moved = 0.0;
        let devs: Vec<f64> = p_s
            .iter()
            .map(|p| {
                moved += c * p;
                problem.x_now - moved - problem.storage.x_ref
            })
            .collect();
        let mut tail = 0.0;
        for i in (0..n).rev() {
            tail += devs[i];
            g[layout.storage_offset + i] = marginal_cost[i] + 2.0 * rho * c * tail;
        }
        g
    };
    let welfare_of = |z: &[f64]| -> f64 {
        let profiles: Vec<Vec<f64>> = layout
            .blocks
            .iter()
            .map(|&(off, slots)| z[off..off + slots].to_vec())
            .collect();
        problem.welfare(utility, &profiles, &z[layout.storage_offset..])
    };
    let natural_residual = |z: &[f64], g: &[f64]| -> f64 {
        let mut trial: Vec<f64> = z.iter().zip(g).map(|(x, d)| x + d).collect();
        project(&mut trial);
        trial.iter().zip(z).map(|(p, x)| (p - x).abs()).fold(0.0, f64::max)
    };

    // Upper bound on the curvature of the negated welfare.
    let utility_curvature = problem
        .evs
        .iter()
        .map(|ev| ev.weight / (utility.offset + ev.p_min).powi(2))
        .fold(0.0, f64::max);
    let lipschitz =
        utility_curvature + 2.0 * a * (problem.evs.len() + 1) as f64 + 2.0 * rho * c * c * (n * (n + 1) / 2) as f64;
    let step = 1.0 / lipschitz;

    let mut x = vec![0.0; layout.dim];
    project(&mut x);
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut value = welfare_of(&x);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let gx = gradient(&x);
        residual = natural_residual(&x, &gx);
        if residual <= tol.kkt {
            break;
        }
        let gy = gradient(&y);
        let mut next: Vec<f64> = y.iter().zip(&gy).map(|(v, d)| v + step * d).collect();
        project(&mut next);
        let next_value = welfare_of(&next);
        if next_value < value {
            // Restart the momentum from the current iterate.
            momentum = 1.0;
            y = x.clone();
            iterations += 1;
            continue;
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        y = next.iter().zip(&x).map(|(nv, xv)| nv + beta * (nv - xv)).collect();
        x = next;
        value = next_value;
        momentum = next_momentum;
        iterations += 1;
    }
    if residual > tol.kkt {
        return Err(Error::NotConverged {
            solver: "central oracle",
            iterations,
            residual,
        });
    }

    let ev_profiles: Vec<Vec<f64>> = layout
        .blocks
        .iter()
        .map(|&(off, slots)| {
            let mut profile = x[off..off + slots].to_vec();
            profile.resize(n, 0.0);
            profile
        })
        .collect();
    let mut p_l = vec![0.0; n];
    for profile in &ev_profiles {
        for (l, p) in p_l.iter_mut().zip(profile) {
            *l += p;
        }
    }
    let p_s = x[layout.storage_offset..].to_vec();
    Ok(CentralSolution {
        welfare: problem.welfare(utility, &ev_profiles, &p_s),
        ev_profiles,
        p_l,
        p_s,
        infeasible,
        iterations,
        kkt_residual: residual,
    })
}

/// Outcome of comparing the price loop against the centralized optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub slots: usize,
    pub evs: usize,
    pub oracle_welfare: f64,
    pub decentralized_welfare: f64,
    /// `(oracle - decentralized) / |oracle|`.
    pub welfare_gap: f64,
    pub max_residual: f64,
    /// Cleared price of the first slot, internal units.
    pub first_price: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Clears the market once at `problem.window.t` with the price loop and compares its
/// recovered primal (with `P_l` set to the delivered demand) against the oracle.
pub fn compare(
    problem: &CentralProblem,
    coordinator: &Coordinator,
    warm_start_price: f64,
    cap: OracleCap,
) -> Result<VerifyReport> {
    let oracle = solve_central(problem, &coordinator.utility, &coordinator.tolerances, cap)?;
    let market = SlotMarket {
        window: problem.window,
        evs: &problem.evs,
        dso: &problem.dso,
        storage: &problem.storage,
        x_now: problem.x_now,
    };
    let negotiation = coordinator.negotiate_slot(&market, warm_start_price)?;
    let n = problem.window.len;
    let profiles: Vec<Vec<f64>> = negotiation
        .state
        .evs
        .iter()
        .map(|s| s.profile.clone().padded(n).0)
        .collect();
    let decentralized = problem.welfare(&coordinator.utility, &profiles, &negotiation.state.dso.p_s);
    Ok(VerifyReport {
        slots: n,
        evs: problem.evs.len(),
        oracle_welfare: oracle.welfare,
        decentralized_welfare: decentralized,
        welfare_gap: (oracle.welfare - decentralized) / oracle.welfare.abs().max(f64::MIN_POSITIVE),
        max_residual: negotiation.state.max_residual(),
        first_price: negotiation.state.lambda.first().copied().unwrap_or(warm_start_price),
        iterations: negotiation.iterations,
        converged: negotiation.converged,
    })
}

/// Truncates a scenario to the oracle cap: the first `cap.evs` sessions by arrival
/// are plugged in together at slot 0, each keeping its stay length up to
/// `cap.slots`, with requirements clipped to 90% of what the shortened stay can
/// deliver.
pub fn truncate_for_oracle(scenario: &Scenario, cap: OracleCap) -> Result<CentralProblem> {
    scenario.validate()?;
    let hours = scenario.grid.slot_hours();
    let mut sessions = scenario.sessions();
    sessions.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.id.cmp(&b.id)));
    let evs: Vec<EvSession> = sessions
        .into_iter()
        .filter(|ev| ev.departure > ev.arrival)
        .take(cap.evs)
        .map(|mut ev| {
            let stay = (ev.departure - ev.arrival).min(cap.slots);
            ev.arrival = 0;
            ev.departure = stay;
            ev.energy = ev.energy.min(0.9 * ev.max_deliverable(stay, hours));
            ev
        })
        .collect();
    let storage = scenario.storage_or_disabled();
    let window = TimeGrid::new(0, compute_window(&evs, 0).min(cap.slots), hours)?;
    Ok(CentralProblem {
        evs,
        dso: scenario.dso,
        storage,
        x_now: storage.x0,
        window,
    })
}

/// `verify` end to end: truncate, clear the market, solve centrally, compare.
pub fn verify(scenario: &Scenario, cap: OracleCap) -> Result<VerifyReport> {
    let problem = truncate_for_oracle(scenario, cap)?;
    let coordinator = scenario.coordinator(&StrategyRegistry::default())?;
    let warm = crate::model::price_to_internal(scenario.market.initial_price, scenario.grid.slot_hours());
    compare(&problem, &coordinator, warm, cap)
}
