//! Single-vehicle subproblem: maximize `sum U(p) - price * p` over the vehicle's
//! remaining window, subject to power bounds and a terminal SOC error of zero.
//!
//! Stationarity gives the water-filling form `p = clamp(U'^{-1}(price + mu * c), lo, hi)`
//! with `c = (1 - xi) * T_c` and a scalar `mu` for the energy equality. The delivered
//! energy is nonincreasing in `mu`, so `mu` is found by bisection.

use crate::error::{Error, Result};
use crate::model::{EvSession, PowerProfile, Tolerances};

const MAX_BISECTIONS: usize = 200;

/// Logarithmic utility `w * ln(offset + p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogUtility {
    pub offset: f64,
}

impl Default for LogUtility {
    fn default() -> Self {
        Self { offset: 1.0 }
    }
}

impl LogUtility {
    pub fn value(&self, power: f64, weight: f64) -> Result<f64> {
        if power < 0.0 {
            return Err(Error::NegativePower(power));
        }
        Ok(self.value_unchecked(power, weight))
    }

    fn value_unchecked(&self, power: f64, weight: f64) -> f64 {
        if self.offset == 1.0 {
            weight * power.ln_1p()
        } else {
            weight * (self.offset + power).ln()
        }
    }

    pub fn marginal(&self, power: f64, weight: f64) -> f64 {
        weight / (self.offset + power)
    }

    /// Power at which the marginal utility equals `marginal`; unbounded when the
    /// marginal price is not positive.
    pub fn inverse_marginal(&self, marginal: f64, weight: f64) -> f64 {
        if marginal > 0.0 {
            weight / marginal - self.offset
        } else {
            f64::INFINITY
        }
    }
}

/// `w * ln(1 + p)`.
pub fn utility(power: f64, weight: f64) -> Result<f64> {
    LogUtility::default().value(power, weight)
}

/// One EV's problem at slot `t`: the price slice covers exactly the slots left
/// before departure.
#[derive(Debug, Clone, Copy)]
pub struct EvSubproblem<'a> {
    pub session: &'a EvSession,
    pub slot_hours: f64,
    pub prices: &'a [f64],
}

impl<'a> EvSubproblem<'a> {
    /// Restricts a window-length price vector starting at slot `t` to the EV's stay.
    pub fn new(session: &'a EvSession, t: usize, slot_hours: f64, window_prices: &'a [f64]) -> Self {
        let slots = session.remaining_slots(t).min(window_prices.len());
        Self {
            session,
            slot_hours,
            prices: &window_prices[..slots],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvSolution {
    pub profile: PowerProfile,
    /// Multiplier of the terminal energy constraint; `None` when the requirement
    /// cannot be met and the profile is a best-effort saturation.
    pub mu: Option<f64>,
    pub objective: f64,
    pub feasible: bool,
    /// Delivered minus required energy, kWh.
    pub energy_residual: f64,
}

pub fn solve_ev(sub: &EvSubproblem<'_>, utility: &LogUtility, tol: &Tolerances) -> EvSolution {
    let ev = sub.session;
    let (lo, hi, w) = (ev.p_min, ev.p_max, ev.weight);
    let c = ev.energy_per_kw_slot(sub.slot_hours);
    let n = sub.prices.len();

    let delivered = |profile: &[f64]| c * profile.iter().sum::<f64>();
    let finish = |profile: Vec<f64>, mu: Option<f64>, feasible: bool| {
        let objective = sub
            .prices
            .iter()
            .zip(&profile)
            .map(|(price, p)| utility.value_unchecked(*p, w) - price * p)
            .sum();
        let energy_residual = delivered(&profile) - ev.energy;
        EvSolution {
            profile: PowerProfile(profile),
            mu,
            objective,
            feasible,
            energy_residual,
        }
    };

    if n == 0 {
        return finish(Vec::new(), None, ev.energy <= tol.energy);
    }
    if ev.energy > c * hi * n as f64 + tol.energy {
        return finish(vec![hi; n], None, false);
    }
    if ev.energy < c * lo * n as f64 - tol.energy {
        return finish(vec![lo; n], None, false);
    }

    let profile_at = |mu: f64| -> Vec<f64> {
        sub.prices
            .iter()
            .map(|price| utility.inverse_marginal(price + mu * c, w).clamp(lo, hi))
            .collect()
    };

    // At `mu_low` every slot saturates at `hi`, at `mu_high` every slot sits at `lo`.
    let max_price = sub.prices.iter().copied().fold(f64::MIN, f64::max);
    let min_price = sub.prices.iter().copied().fold(f64::MAX, f64::min);
    let mut mu_low = (utility.marginal(hi, w) - max_price) / c - 1.0;
    let mut mu_high = (utility.marginal(lo, w) - min_price) / c + 1.0;

    let mut best = (mu_high, profile_at(mu_high));
    let mut best_gap = (delivered(&best.1) - ev.energy).abs();
    if best_gap > tol.energy {
        let low_profile = profile_at(mu_low);
        let low_gap = (delivered(&low_profile) - ev.energy).abs();
        if low_gap < best_gap {
            best = (mu_low, low_profile);
            best_gap = low_gap;
        }
    }

    let mut iterations = 0;
    while best_gap > tol.energy && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (mu_low + mu_high);
        if mid <= mu_low || mid >= mu_high {
            break;
        }
        let profile = profile_at(mid);
        let gap = delivered(&profile) - ev.energy;
        if gap > 0.0 {
            mu_low = mid;
        } else {
            mu_high = mid;
        }
        if gap.abs() < best_gap {
            best_gap = gap.abs();
            best = (mid, profile);
        }
        iterations += 1;
    }

    let (mu, profile) = best;
    finish(profile, Some(mu), true)
}
