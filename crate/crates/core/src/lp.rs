//! Dense bounded-variable primal simplex.
//!
//! Solves `min c'x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  l <= x <= u` with
//! finite lower bounds. Nonbasic variables rest on one of their bounds, so
//! bound pins from branching cost nothing extra. Phase one drives artificial
//! variables to zero; phase two optimises the real objective.
//!
//! Entering variables are chosen by largest reduced cost and the solver
//! falls back to Bland's smallest-index rule after a run of degenerate
//! pivots, which rules out cycling. Every choice has a deterministic
//! tie-break, so identical problems produce bit-identical solutions.

use alloc::vec;
use alloc::vec::Vec;

/// Reduced-cost tolerance.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Relative feasibility tolerance used when verifying a solution.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Smallest tableau entry accepted as a pivot in the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Pivots below this are numerical breakdown.
const BREAKDOWN_PIVOT: f64 = 1e-12;
const DEGENERATE_STEP: f64 = 1e-12;
const BLAND_AFTER: usize = 8;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl Row {
    pub fn new(coefficients: Vec<f64>, rhs: f64) -> Self {
        Row { coefficients, rhs }
    }

    fn activity(&self, x: &[f64]) -> (f64, f64) {
        self.coefficients
            .iter()
            .zip(x)
            .fold((0.0, 0.0), |(s, m), (a, v)| (s + a * v, m + (a * v).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Minimised.
    pub objective: Vec<f64>,
    pub equalities: Vec<Row>,
    /// `coefficients . x <= rhs`.
    pub inequalities: Vec<Row>,
    pub lower: Vec<f64>,
    /// May be `f64::INFINITY`.
    pub upper: Vec<f64>,
}

impl LpProblem {
    /// A problem over `n` variables bounded to `[0, 1]` with no rows yet.
    pub fn unit_box(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            objective,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        let mismatch = |what, found| LpError::Dimension {
            what,
            expected: n,
            found,
        };
        if self.lower.len() != n {
            return Err(mismatch("lower bounds", self.lower.len()));
        }
        if self.upper.len() != n {
            return Err(mismatch("upper bounds", self.upper.len()));
        }
        for row in self.equalities.iter().chain(&self.inequalities) {
            if row.coefficients.len() != n {
                return Err(mismatch("constraint row", row.coefficients.len()));
            }
            if !row.rhs.is_finite() || row.coefficients.iter().any(|a| !a.is_finite()) {
                return Err(LpError::NonFinite);
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite);
        }
        for (var, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !l.is_finite() || u.is_nan() || l > u {
                return Err(LpError::InvalidBounds {
                    var,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }

    /// Largest constraint or bound violation of `x`, relative to the scale
    /// of each row.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.equalities {
            let (s, m) = row.activity(x);
            worst = worst.max((s - row.rhs).abs() / scale(m, row.rhs));
        }
        for row in &self.inequalities {
            let (s, m) = row.activity(x);
            worst = worst.max((s - row.rhs).max(0.0) / scale(m, row.rhs));
        }
        for ((&v, &l), &u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max((l - v).max(0.0)).max((v - u).max(0.0));
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).fold(0.0, |s, (c, v)| s + c * v)
    }
}

fn scale(magnitude: f64, rhs: f64) -> f64 {
    1.0f64.max(magnitude).max(rhs.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Meaningful only when `status` is `Optimal`.
    pub values: Vec<f64>,
    /// `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("malformed problem: {what} has width {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("variable {var} has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("degenerate: numerical breakdown ({0})")]
    Degenerate(&'static str),
    #[error("iteration limit reached")]
    IterationLimit,
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.check()?;
    let mut tableau = Tableau::build(problem);
    let mut iterations = 0;

    let phase_one: Vec<f64> = (0..tableau.cols)
        .map(|j| if tableau.is_artificial(j) { 1.0 } else { 0.0 })
        .collect();
    let status = tableau.optimise(&phase_one, &mut iterations)?;
    debug_assert_ne!(status, LpStatus::Unbounded);
    let infeasibility: f64 = (tableau.first_artificial..tableau.cols)
        .map(|j| tableau.x[j])
        .sum();
    let rhs_scale = problem
        .equalities
        .iter()
        .chain(&problem.inequalities)
        .fold(1.0f64, |m, r| m.max(r.rhs.abs()));
    if infeasibility > FEASIBILITY_TOL * rhs_scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            iterations,
        });
    }
    tableau.retire_artificials()?;

    let mut costs = vec![0.0; tableau.cols];
    costs[..problem.num_vars()].copy_from_slice(&problem.objective);
    let status = tableau.optimise(&costs, &mut iterations)?;
    if status == LpStatus::Unbounded {
        return Ok(LpSolution {
            status,
            values: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations,
        });
    }

    let values: Vec<f64> = (0..problem.num_vars())
        .map(|j| snap(tableau.x[j], problem.lower[j], problem.upper[j]))
        .collect();
    if problem.max_violation(&values) > FEASIBILITY_TOL {
        return Err(LpError::Degenerate("solution fails substitution check"));
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: problem.objective_value(&values),
        values,
        iterations,
    })
}

fn snap(v: f64, lower: f64, upper: f64) -> f64 {
    const SNAP: f64 = 1e-11;
    if (v - lower).abs() <= SNAP {
        lower
    } else if (v - upper).abs() <= SNAP {
        upper
    } else {
        v
    }
}

/// Canonical-form tableau over structural, slack and artificial columns.
struct Tableau {
    rows: usize,
    cols: usize,
    first_artificial: usize,
    /// Row-major `rows x cols`, holding `B^-1 A`.
    a: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Row of a basic column, `usize::MAX` for nonbasic ones.
    row_of: Vec<usize>,
}

impl Tableau {
    fn build(p: &LpProblem) -> Self {
        let n = p.num_vars();
        let m_eq = p.equalities.len();
        let m_le = p.inequalities.len();
        let rows = m_eq + m_le;

        // Start every structural variable at its lower bound and see which
        // rows its slack can absorb; the rest get an artificial.
        let lower_activity = |row: &Row| {
            row.coefficients
                .iter()
                .zip(&p.lower)
                .fold(0.0, |s, (a, l)| s + a * l)
        };
        let residuals: Vec<f64> = p
            .equalities
            .iter()
            .chain(&p.inequalities)
            .map(|r| r.rhs - lower_activity(r))
            .collect();
        let needs_artificial: Vec<bool> = (0..rows)
            .map(|r| r < m_eq || residuals[r] < 0.0)
            .collect();
        let artificials = needs_artificial.iter().filter(|&&b| b).count();
        let first_artificial = n + m_le;
        let cols = first_artificial + artificials;

        let mut a = vec![0.0; rows * cols];
        let mut lower = vec![0.0; cols];
        let mut upper = vec![f64::INFINITY; cols];
        lower[..n].copy_from_slice(&p.lower);
        upper[..n].copy_from_slice(&p.upper);
        let mut x = lower.clone();
        let mut basis = vec![0; rows];
        let mut row_of = vec![usize::MAX; cols];

        let mut next_artificial = first_artificial;
        for (r, row) in p.equalities.iter().chain(&p.inequalities).enumerate() {
            // Rows with a negative residual are negated so the basic column
            // enters with coefficient +1 and a non-negative value.
            let sign = if residuals[r] < 0.0 { -1.0 } else { 1.0 };
            let line = &mut a[r * cols..(r + 1) * cols];
            for (dst, &src) in line.iter_mut().zip(&row.coefficients) {
                *dst = sign * src;
            }
            if r >= m_eq {
                line[n + (r - m_eq)] = sign;
            }
            let basic = if needs_artificial[r] {
                let j = next_artificial;
                next_artificial += 1;
                line[j] = 1.0;
                j
            } else {
                n + (r - m_eq)
            };
            basis[r] = basic;
            row_of[basic] = r;
            x[basic] = residuals[r].abs();
        }
        Tableau {
            rows,
            cols,
            first_artificial,
            a,
            lower,
            upper,
            x,
            basis,
            row_of,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.first_artificial
    }

    #[inline]
    fn at(&self, r: usize, j: usize) -> f64 {
        self.a[r * self.cols + j]
    }

    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut d = costs.to_vec();
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                let line = &self.a[r * self.cols..(r + 1) * self.cols];
                for (dj, &arj) in d.iter_mut().zip(line) {
                    *dj -= cb * arj;
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        d
    }

    fn at_upper(&self, j: usize) -> bool {
        self.upper[j].is_finite() && self.x[j] >= self.upper[j]
    }

    /// Picks the entering column and its direction (+1 increase, -1 decrease).
    #[allow(clippy::needless_range_loop)]
    fn entering(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols {
            if self.row_of[j] != usize::MAX || self.upper[j] <= self.lower[j] {
                continue;
            }
            let dir = if self.at_upper(j) {
                if d[j] > OPTIMALITY_TOL {
                    -1.0
                } else {
                    continue;
                }
            } else if d[j] < -OPTIMALITY_TOL {
                1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = d[j].abs();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn optimise(&mut self, costs: &[f64], iterations: &mut usize) -> Result<LpStatus, LpError> {
        let mut d = self.reduced_costs(costs);
        let mut degenerate_run = 0;
        loop {
            if *iterations >= MAX_ITERATIONS {
                return Err(LpError::IterationLimit);
            }
            let bland = degenerate_run >= BLAND_AFTER;
            let Some((q, dir)) = self.entering(&d, bland) else {
                return Ok(LpStatus::Optimal);
            };
            *iterations += 1;

            // Ratio test: largest step keeping every basic variable in bounds.
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None;
            for r in 0..self.rows {
                let alpha = self.at(r, q);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                // x_B(r) moves by -dir * alpha per unit step.
                let rate = -dir * alpha;
                let b = self.basis[r];
                let (limit, to_upper) = if rate < 0.0 {
                    ((self.x[b] - self.lower[b]).max(0.0) / -rate, false)
                } else if self.upper[b].is_finite() {
                    ((self.upper[b] - self.x[b]).max(0.0) / rate, true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < step,
                    Some((lr, _)) => {
                        limit < step
                            || (limit == step && {
                                let cur = self.basis[lr];
                                if bland {
                                    b < cur
                                } else {
                                    alpha.abs() > self.at(lr, q).abs()
                                        || (alpha.abs() == self.at(lr, q).abs() && b < cur)
                                }
                            })
                    }
                };
                if better {
                    step = limit;
                    leave = Some((r, to_upper));
                }
            }
            if step.is_infinite() {
                return Ok(LpStatus::Unbounded);
            }
            degenerate_run = if step <= DEGENERATE_STEP {
                degenerate_run + 1
            } else {
                0
            };

            for r in 0..self.rows {
                let alpha = self.at(r, q);
                if alpha != 0.0 {
                    let b = self.basis[r];
                    self.x[b] -= dir * alpha * step;
                }
            }
            self.x[q] += dir * step;

            match leave {
                None => {
                    // Bound flip without a basis change.
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((r, to_upper)) => {
                    let b = self.basis[r];
                    self.x[b] = if to_upper { self.upper[b] } else { self.lower[b] };
                    self.pivot(r, q)?;
                    let dq = d[q];
                    if dq != 0.0 {
                        let line = &self.a[r * self.cols..(r + 1) * self.cols];
                        for (dj, &arj) in d.iter_mut().zip(line) {
                            *dj -= dq * arj;
                        }
                    }
                    d[q] = 0.0;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) -> Result<(), LpError> {
        let cols = self.cols;
        let p = self.at(r, q);
        if p.abs() < BREAKDOWN_PIVOT {
            return Err(LpError::Degenerate("pivot below 1e-12"));
        }
        let inv = 1.0 / p;
        for v in &mut self.a[r * cols..(r + 1) * cols] {
            *v *= inv;
        }
        self.a[r * cols + q] = 1.0;
        let pivot_row: Vec<f64> = self.a[r * cols..(r + 1) * cols].to_vec();
        for k in 0..self.rows {
            if k == r {
                continue;
            }
            let f = self.a[k * cols + q];
            if f == 0.0 {
                continue;
            }
            let line = &mut self.a[k * cols..(k + 1) * cols];
            for (dst, &src) in line.iter_mut().zip(&pivot_row) {
                *dst -= f * src;
            }
            line[q] = 0.0;
        }
        let old = self.basis[r];
        self.row_of[old] = usize::MAX;
        self.basis[r] = q;
        self.row_of[q] = r;
        Ok(())
    }

    /// Fixes artificials at zero and pivots them out of the basis where the
    /// row allows it. Rows with no usable pivot are redundant and keep their
    /// artificial basic at zero.
    fn retire_artificials(&mut self) -> Result<(), LpError> {
        for j in self.first_artificial..self.cols {
            self.upper[j] = 0.0;
            if self.row_of[j] == usize::MAX {
                self.x[j] = 0.0;
            }
        }
        for r in 0..self.rows {
            let b = self.basis[r];
            if !self.is_artificial(b) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.first_artificial {
                if self.row_of[j] != usize::MAX {
                    continue;
                }
                let v = self.at(r, j).abs();
                if v > PIVOT_TOL && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                // Zero-length step: the entering column keeps its bound value.
                self.pivot(r, j)?;
                self.x[b] = 0.0;
            }
        }
        Ok(())
    }
}
