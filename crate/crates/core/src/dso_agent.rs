//! Joint generation + storage subproblem. At prices `lambda` the DSO maximizes
//!
//! ```text
//! sum_t [ lambda_t P_l,t - C(P_l,t - P_s,t) ] - rho * sum_j (x - delta_s T_c sum_{i<=j} P_s,i - x_ref)^2
//! ```
//!
//! over the generation and storage boxes. The objective is a strictly concave
//! quadratic in `z = (P_l, P_s)`, so it is assembled as a [`BoxQp`] and handed to
//! whichever [`QpSolver`] the caller picked.

use crate::error::{Error, Result};
use crate::model::{DsoSpec, PowerProfile, StorageSpec, TimeGrid};
use crate::qp::{BoxQp, QpSolver};

/// `a q^2 + b q` for net generated power `q = P_l - P_s`.
pub fn generation_cost(q: f64, dso: &DsoSpec) -> f64 {
    dso.a * q * q + dso.b * q
}

/// `sum_j (x_now - sum_{i<=j} P_s,i delta_s T_c - x_ref)^2` over the window.
pub fn storage_tracking_penalty(x_now: f64, p_s: &[f64], storage: &StorageSpec, slot_hours: f64) -> f64 {
    let per_kw = storage.delta_s * slot_hours;
    let mut moved = 0.0;
    p_s.iter()
        .map(|p| {
            moved += p * per_kw;
            let dev = x_now - moved - storage.x_ref;
            dev * dev
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct DsoSubproblem<'a> {
    pub dso: &'a DsoSpec,
    pub storage: &'a StorageSpec,
    pub x_now: f64,
    pub window: TimeGrid,
    pub prices: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsoSolution {
    pub p_l: PowerProfile,
    pub p_s: PowerProfile,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl DsoSolution {
    /// Stacked `(P_l, P_s)`, the layout expected as a solver warm start.
    pub fn stacked(&self) -> Vec<f64> {
        self.p_l.iter().chain(self.p_s.iter()).copied().collect()
    }
}

impl<'a> DsoSubproblem<'a> {
    pub fn check(&self) -> Result<()> {
        if self.prices.len() != self.window.len {
            return Err(Error::LengthMismatch {
                expected: self.window.len,
                actual: self.prices.len(),
            });
        }
        Ok(())
    }

    /// Profit to be maximized at a given `(P_l, P_s)`.
    pub fn objective(&self, p_l: &[f64], p_s: &[f64]) -> f64 {
        let revenue: f64 = self
            .prices
            .iter()
            .zip(p_l.iter().zip(p_s))
            .map(|(price, (l, s))| price * l - generation_cost(l - s, self.dso))
            .sum();
        revenue - self.storage.rho * storage_tracking_penalty(self.x_now, p_s, self.storage, self.window.slot_hours)
    }

    /// Negated profit as `1/2 z'Hz + g'z + const` with `z = (P_l, P_s)`.
    ///
    /// With `S_j` the cumulative storage power, `sum_j S_j^2 = P_s' M P_s` where
    /// `M_ik = N - max(i, k)`, and `sum_j S_j = sum_i (N - i) P_s,i`.
    pub fn to_qp(&self) -> BoxQp {
        let n = self.window.len;
        let dim = 2 * n;
        let (a, b) = (self.dso.a, self.dso.b);
        let c = self.storage.delta_s * self.window.slot_hours;
        let rho = self.storage.rho;
        let dev = self.x_now - self.storage.x_ref;

        let mut hessian = vec![0.0; dim * dim];
        let mut linear = vec![0.0; dim];
        for i in 0..n {
            let (l, s) = (i, n + i);
            hessian[l * dim + l] = 2.0 * a;
            hessian[l * dim + s] = -2.0 * a;
            hessian[s * dim + l] = -2.0 * a;
            hessian[s * dim + s] = 2.0 * a;
            for k in 0..n {
                hessian[s * dim + n + k] += 2.0 * rho * c * c * (n - i.max(k)) as f64;
            }
            linear[l] = b - self.prices[i];
            linear[s] = -b - 2.0 * rho * dev * c * (n - i) as f64;
        }

        let mut lower = vec![self.dso.p_min; n];
        lower.extend(std::iter::repeat_n(self.storage.ps_min, n));
        let mut upper = vec![self.dso.p_max; n];
        upper.extend(std::iter::repeat_n(self.storage.ps_max, n));

        BoxQp {
            hessian,
            linear,
            lower,
            upper,
        }
    }
}

pub fn solve_dso(
    sub: &DsoSubproblem<'_>,
    solver: &dyn QpSolver,
    kkt_tol: f64,
    warm_start: Option<&[f64]>,
) -> Result<DsoSolution> {
    sub.check()?;
    let qp = sub.to_qp();
    let sol = solver.solve(&qp, kkt_tol, warm_start)?;
    let n = sub.window.len;
    let p_l = sol.z[..n].to_vec();
    let p_s = sol.z[n..].to_vec();
    Ok(DsoSolution {
        objective: sub.objective(&p_l, &p_s),
        p_l: PowerProfile(p_l),
        p_s: PowerProfile(p_s),
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}
