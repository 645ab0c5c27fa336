//! Strictly convex box-constrained quadratic programs
//! `min 1/2 z'Hz + g'z  s.t.  lower <= z <= upper`, and the solvers that can be
//! plugged in behind the DSO agent.

use std::fmt::Debug;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    /// Row-major `n x n`, symmetric positive definite.
    pub hessian: Vec<f64>,
    pub linear: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    fn h(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.dim() + j]
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let row = &self.hessian[i * n..(i + 1) * n];
                row.iter().zip(z).map(|(h, x)| h * x).sum::<f64>() + self.linear[i]
            })
            .collect()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let grad = self.gradient(z);
        // 1/2 z'Hz + g'z = 1/2 z'(Hz + g) + 1/2 g'z
        z.iter()
            .zip(grad.iter().zip(&self.linear))
            .map(|(x, (gr, g))| 0.5 * x * (gr + g))
            .sum()
    }

    pub fn project(&self, z: &mut [f64]) {
        for ((x, lo), hi) in z.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// Max-norm of the natural residual `z - P(z - grad f(z))`: the stationarity
    /// violation of interior coordinates, and the outward-pointing part of the
    /// gradient at active bounds.
    pub fn kkt_residual(&self, z: &[f64]) -> f64 {
        let grad = self.gradient(z);
        z.iter()
            .zip(&grad)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((x, g), (lo, hi))| (x - (x - g).clamp(*lo, *hi)).abs())
            .fold(0.0, f64::max)
    }

    /// Gershgorin bound on the largest Hessian eigenvalue.
    pub fn lipschitz(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| self.hessian[i * n..(i + 1) * n].iter().map(|h| h.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn start(&self, warm_start: Option<&[f64]>) -> Vec<f64> {
        let mut z = match warm_start {
            Some(w) if w.len() == self.dim() => w.to_vec(),
            _ => vec![0.0; self.dim()],
        };
        self.project(&mut z);
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// A strategy for solving [`BoxQp`] instances to a projected-stationarity tolerance.
pub trait QpSolver: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn solve(&self, qp: &BoxQp, tol: f64, warm_start: Option<&[f64]>) -> Result<QpSolution>;
}

/// Projected gradient with fixed step `1/L`.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedGradient {
    pub max_iterations: usize,
}

impl Default for ProjectedGradient {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
        }
    }
}

impl QpSolver for ProjectedGradient {
    fn name(&self) -> &'static str {
        "projected-gradient"
    }

    fn solve(&self, qp: &BoxQp, tol: f64, warm_start: Option<&[f64]>) -> Result<QpSolution> {
        let step = 1.0 / qp.lipschitz().max(f64::MIN_POSITIVE);
        let mut z = qp.start(warm_start);
        let mut residual = f64::INFINITY;
        for k in 0..=self.max_iterations {
            let grad = qp.gradient(&z);
            residual = z
                .iter()
                .zip(&grad)
                .zip(qp.lower.iter().zip(&qp.upper))
                .map(|((x, g), (lo, hi))| (x - (x - g).clamp(*lo, *hi)).abs())
                .fold(0.0, f64::max);
            if residual <= tol {
                return Ok(QpSolution {
                    z,
                    iterations: k,
                    kkt_residual: residual,
                });
            }
            for (x, g) in z.iter_mut().zip(&grad) {
                *x -= step * g;
            }
            qp.project(&mut z);
        }
        Err(Error::NotConverged {
            solver: self.name(),
            iterations: self.max_iterations,
            residual,
        })
    }
}

/// Primal-dual active-set method: guess the active bounds, solve the reduced
/// linear system on the free coordinates by Cholesky, and repeat until the
/// guess is self-consistent. Falls back to projected gradient if the active set
/// cycles.
#[derive(Debug, Clone, Copy)]
pub struct ActiveSet {
    pub max_iterations: usize,
    pub fallback: ProjectedGradient,
}

impl Default for ActiveSet {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            fallback: ProjectedGradient::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

impl QpSolver for ActiveSet {
    fn name(&self) -> &'static str {
        "active-set"
    }

    fn solve(&self, qp: &BoxQp, tol: f64, warm_start: Option<&[f64]>) -> Result<QpSolution> {
        let n = qp.dim();
        let mut z = qp.start(warm_start);
        let mut state = vec![Bound::Free; n];
        let mut previous: Option<Vec<Bound>> = None;

        for k in 0..self.max_iterations {
            let grad = qp.gradient(&z);
            for i in 0..n {
                let (lo, hi) = (qp.lower[i], qp.upper[i]);
                let trial = z[i] - grad[i];
                state[i] = if hi - lo <= 0.0 || trial <= lo {
                    Bound::Lower
                } else if trial >= hi {
                    Bound::Upper
                } else {
                    Bound::Free
                };
            }
            if previous.as_ref() == Some(&state) {
                let residual = qp.kkt_residual(&z);
                if residual <= tol {
                    return Ok(QpSolution {
                        z,
                        iterations: k,
                        kkt_residual: residual,
                    });
                }
            }

            let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
            for i in 0..n {
                match state[i] {
                    Bound::Lower => z[i] = qp.lower[i],
                    Bound::Upper => z[i] = qp.upper[i],
                    Bound::Free => {}
                }
            }
            if !free.is_empty() {
                // H_FF z_F = -(g_F + H_FA z_A)
                let m = free.len();
                let mut system = vec![0.0; m * m];
                let mut rhs = vec![0.0; m];
                for (a, &i) in free.iter().enumerate() {
                    for (b, &j) in free.iter().enumerate() {
                        system[a * m + b] = qp.h(i, j);
                    }
                    let fixed: f64 = (0..n)
                        .filter(|&j| state[j] != Bound::Free)
                        .map(|j| qp.h(i, j) * z[j])
                        .sum();
                    rhs[a] = -(qp.linear[i] + fixed);
                }
                if !cholesky_solve(&mut system, &mut rhs, m) {
                    break;
                }
                for (a, &i) in free.iter().enumerate() {
                    z[i] = rhs[a];
                }
            }
            let residual = qp.kkt_residual(&z);
            if residual <= tol {
                return Ok(QpSolution {
                    z,
                    iterations: k + 1,
                    kkt_residual: residual,
                });
            }
            previous = Some(state.clone());
        }

        qp.project(&mut z);
        self.fallback.solve(qp, tol, Some(&z))
    }
}

/// In-place Cholesky solve of a dense SPD system. Returns false if the matrix is
/// not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}
