//! Small dense linear programming.
//!
//! Everything solved here is tiny (a few dozen variables, a handful of
//! equality rows), so a self-contained two-phase tableau simplex with Bland's
//! rule is enough: deterministic, no external solver, no cycling.
//!
//! The one problem shape used throughout the crate is the max-min barycentric
//! program over points `x_1..x_k` in `R^d`:
//!
//! ```text
//!     maximize t   subject to   sum(lambda) = 1,
//!                               sum(lambda_i * x_i) = 0,
//!                               lambda_i >= t.
//! ```
//!
//! Its optimum `t*` is positive exactly when 0 lies in the relative interior
//! of the convex hull of the points, and the optimizer is the unique
//! reproducible weight selection used for node measures. The dual solution
//! yields a separating functional when `t* <= 0` or when the equality system
//! is infeasible outright.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

/// Outcome of the max-min barycentric program.
#[derive(Debug, Clone)]
pub enum MaxMin {
    /// Feasible with optimal min weight `t_star`; `weights` attains it.
    /// `separator` is the dual direction: when `t_star <= 0` it satisfies
    /// `separator . x_i >= -t_star` for every point, certifying that 0 is
    /// not in the relative interior.
    Optimal {
        weights: Vec<f64>,
        t_star: f64,
        separator: Vec<f64>,
    },
    /// The equality system has no solution (0 is outside the affine hull);
    /// `separator` satisfies `separator . x_i >= margin > 0` for all i.
    InfeasibleSystem { separator: Vec<f64>, margin: f64 },
}

/// Dense equality-form LP: maximize `c.z` subject to `A z = b`, `z >= 0`.
struct Tableau {
    m: usize,
    n: usize,
    /// Row-major `m x n` constraint matrix, kept in original form for dual
    /// recovery.
    a_orig: Vec<f64>,
    /// Working tableau rows `[B^-1 A | B^-1 b]`, each of length `n + 1`.
    rows: Vec<Vec<f64>>,
    /// Reduced-cost row of length `n + 1` (last entry = -objective).
    cost: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    /// Expects `b >= 0`; callers normalize row signs first.
    fn new(a: Vec<f64>, b: Vec<f64>, m: usize, n: usize) -> Self {
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let mut r: Vec<f64> = a[i * n..(i + 1) * n].to_vec();
            r.push(b[i]);
            rows.push(r);
        }
        Tableau {
            m,
            n,
            a_orig: a,
            rows,
            cost: vec![0.0; n + 1],
            basis: vec![usize::MAX; m],
        }
    }

    /// Installs the reduced-cost row for objective `c` given the current
    /// basis (prices out basic columns).
    fn set_objective(&mut self, c: &[f64]) {
        self.cost[..self.n].copy_from_slice(c);
        self.cost[self.n] = 0.0;
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = self.rows[i].clone();
                for (cv, rv) in self.cost.iter_mut().zip(&row) {
                    *cv -= cb * rv;
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= piv;
        }
        let prow = self.rows[row].clone();
        for i in 0..self.m {
            if i != row {
                let f = self.rows[i][col];
                if f != 0.0 {
                    for (v, p) in self.rows[i].iter_mut().zip(&prow) {
                        *v -= f * p;
                    }
                }
            }
        }
        let f = self.cost[col];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule: entering = lowest-index column with positive reduced
    /// cost, leaving = min-ratio row breaking ties by lowest basic index.
    /// Returns false once optimal. `allowed` restricts entering columns.
    fn run(&mut self, allowed: usize) -> Result<()> {
        loop {
            let mut enter = None;
            for j in 0..allowed {
                if self.cost[j] > COST_TOL {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else {
                return Ok(());
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..self.m {
                let a = self.rows[i][j];
                if a > PIVOT_TOL {
                    let ratio = self.rows[i][self.n] / a;
                    if ratio < best - 1e-15
                        || (ratio < best + 1e-15
                            && leave.map(|l| self.basis[i] < self.basis[l]).unwrap_or(true))
                    {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(i) = leave else {
                return Err(Error::Numerical("unbounded linear program".into()));
            };
            self.pivot(i, j);
        }
    }

    fn solution(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for i in 0..self.m {
            if self.basis[i] < self.n {
                z[self.basis[i]] = self.rows[i][self.n];
            }
        }
        z
    }

    /// Dual prices for objective `c`: solves `B^T y = c_B` over the original
    /// columns of the final basis.
    fn duals(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut bt = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for (i, &bi) in self.basis.iter().enumerate() {
            for r in 0..m {
                bt[i * m + r] = self.a_orig[r * self.n + bi];
            }
            rhs[i] = c.get(bi).copied().unwrap_or(0.0);
        }
        solve_dense(&mut bt, &mut rhs, m).unwrap_or_else(|_| vec![0.0; m])
    }
}

/// Gaussian elimination with partial pivoting for a dense `n x n` system;
/// consumes its inputs.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-14 {
            return Err(Error::Numerical("singular system".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for j in col + 1..n {
            s -= a[col * n + j] * x[j];
        }
        x[col] = s / a[col * n + col];
    }
    Ok(x)
}

/// Two-phase simplex on `max c.z, A z = b, z >= 0`. Returns the primal
/// solution, the objective value, and the dual prices of the equality rows.
fn solve_equality_lp(
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    m: usize,
    n: usize,
) -> Result<LpOutcome> {
    // Phase 1 tableau with m artificials appended.
    let mut a1 = vec![0.0; m * (n + m)];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            a1[i * (n + m) + j] = sign * a[i * n + j];
        }
        a1[i * (n + m) + n + i] = 1.0;
    }
    let b1: Vec<f64> = b.iter().map(|v| v.abs()).collect();
    let mut t = Tableau::new(a1, b1, m, n + m);
    for i in 0..m {
        t.basis[i] = n + i;
    }
    let mut c1 = vec![0.0; n + m];
    for v in c1[n..].iter_mut() {
        *v = -1.0;
    }
    t.set_objective(&c1);
    t.run(n + m)?;
    let infeas = -t.cost[t.n];
    if infeas.abs() > 1e-9 {
        // Infeasible: phase-1 duals certify it (y.b > 0, y.A_j <= 0).
        let y = t.duals(&c1);
        // Undo the row sign flips applied for negative b.
        let y: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| if b[i] < 0.0 { -v } else { *v })
            .collect();
        return Ok(LpOutcome::Infeasible { duals: y });
    }
    // Drive surviving artificial variables out of the basis where possible.
    // An artificial stuck on an all-zero row marks a redundant constraint;
    // it stays basic at level zero and never interacts with real pivots.
    for i in 0..m {
        if t.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t.rows[i][j].abs() > 1e-9) {
                t.pivot(i, j);
            }
        }
    }
    let mut cfull = c.clone();
    cfull.extend(std::iter::repeat(0.0).take(m));
    t.set_objective(&cfull);
    // Entering columns stay restricted to the real variables.
    t.run(n)?;
    let z = t.solution();
    let y = t.duals(&cfull);
    let obj = c.iter().zip(&z).map(|(ci, zi)| ci * zi).sum();
    Ok(LpOutcome::Optimal {
        solution: z[..n].to_vec(),
        objective: obj,
        duals: y,
    })
}

enum LpOutcome {
    Optimal {
        solution: Vec<f64>,
        objective: f64,
        duals: Vec<f64>,
    },
    Infeasible {
        duals: Vec<f64>,
    },
}

/// Solves the max-min barycentric program over `points` (see module docs).
///
/// Points are rescaled to unit max-norm internally so tolerances are relative
/// to point magnitudes.
pub fn max_min_barycentric(points: &[Vec<f64>]) -> Result<MaxMin> {
    let k = points.len();
    if k == 0 {
        return Err(Error::Dimension("no points".into()));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("ragged or zero-dimensional points".into()));
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let xs: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v / scale).collect())
        .collect();

    // Variables: mu_1..mu_k >= 0, tp >= 0, tn >= 0 with t = tp - tn and
    // lambda_i = mu_i + t. Rows: sum lambda = 1 and sum lambda_i x_i = 0.
    let n = k + 2;
    let m = d + 1;
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    for j in 0..k {
        a[j] = 1.0;
    }
    a[k] = k as f64;
    a[k + 1] = -(k as f64);
    b[0] = 1.0;
    for r in 0..d {
        let row = (r + 1) * n;
        let mut sx = 0.0;
        for j in 0..k {
            a[row + j] = xs[j][r];
            sx += xs[j][r];
        }
        a[row + k] = sx;
        a[row + k + 1] = -sx;
    }
    let mut c = vec![0.0; n];
    c[k] = 1.0;
    c[k + 1] = -1.0;

    match solve_equality_lp(a, b, c, m, n)? {
        LpOutcome::Infeasible { duals } => {
            // duals: y0 + u.x_i <= tol for all i with y0 = y.b > 0, so -u
            // separates with margin ~ y0.
            let y0 = duals[0];
            let mut u: Vec<f64> = duals[1..].iter().map(|v| -v).collect();
            let norm = u.iter().fold(0.0f64, |mx, v| mx.max(v.abs())).max(1e-300);
            for v in u.iter_mut() {
                *v /= norm;
            }
            let margin = xs
                .iter()
                .map(|x| x.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .max(y0 / norm);
            Ok(MaxMin::InfeasibleSystem {
                separator: u,
                margin: margin * scale,
            })
        }
        LpOutcome::Optimal {
            solution,
            objective,
            duals,
        } => {
            let t = objective;
            let weights: Vec<f64> = solution[..k].iter().map(|mu| mu + t).collect();
            let mut separator: Vec<f64> = duals[1..].to_vec();
            let norm = separator.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm > 1e-300 {
                for v in separator.iter_mut() {
                    *v /= norm;
                }
            }
            Ok(MaxMin::Optimal {
                weights,
                t_star: t,
                separator,
            })
        }
    }
}

/// Box-constrained variant: maximize the minimum weight subject to
/// `lo_i <= q_i <= hi_i` on top of the barycentric constraints. Returns
/// `None` when the box makes the system infeasible.
pub fn max_min_barycentric_boxed(
    points: &[Vec<f64>],
    lo: &[f64],
    hi: &[f64],
) -> Result<Option<MaxMin>> {
    let k = points.len();
    if lo.len() != k || hi.len() != k {
        return Err(Error::Dimension("box bounds length mismatch".into()));
    }
    let d = points[0].len();
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let xs: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v / scale).collect())
        .collect();

    // Variables: q_1..q_k >= 0, tp, tn, surplus r_i (q_i - t - r_i = 0 is
    // replaced by q_i >= t via r_i), slack s_i for q_i <= hi, surplus w_i for
    // q_i >= lo.
    // Layout: q(k), tp, tn, r(k), s(k), w(k) -> n = 4k + 2.
    let n = 4 * k + 2;
    let m = (d + 1) + 3 * k;
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    let (tp, tn) = (k, k + 1);
    let (roff, soff, woff) = (k + 2, 2 * k + 2, 3 * k + 2);
    // Row 0: sum q = 1.
    for j in 0..k {
        a[j] = 1.0;
    }
    b[0] = 1.0;
    // Rows 1..=d: sum q_i x_i = 0.
    for r in 0..d {
        let row = (r + 1) * n;
        for j in 0..k {
            a[row + j] = xs[j][r];
        }
    }
    // q_i - t - r_i = 0, q_i + s_i = hi_i, q_i - w_i = lo_i.
    for i in 0..k {
        let row = (d + 1 + i) * n;
        a[row + i] = 1.0;
        a[row + tp] = -1.0;
        a[row + tn] = 1.0;
        a[row + roff + i] = -1.0;

        let row = (d + 1 + k + i) * n;
        a[row + i] = 1.0;
        a[row + soff + i] = 1.0;
        b[d + 1 + k + i] = hi[i];

        let row = (d + 1 + 2 * k + i) * n;
        a[row + i] = 1.0;
        a[row + woff + i] = -1.0;
        b[d + 1 + 2 * k + i] = lo[i];
    }
    let mut c = vec![0.0; n];
    c[tp] = 1.0;
    c[tn] = -1.0;

    match solve_equality_lp(a, b, c, m, n)? {
        LpOutcome::Infeasible { .. } => Ok(None),
        LpOutcome::Optimal {
            solution,
            objective,
            ..
        } => Ok(Some(MaxMin::Optimal {
            weights: solution[..k].to_vec(),
            t_star: objective,
            separator: Vec::new(),
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn symmetric_pair_is_inside() {
        match max_min_barycentric(&pts(&[&[1.0], &[-1.0]])).unwrap() {
            MaxMin::Optimal { weights, t_star, .. } => {
                assert!(t_star > 0.4);
                assert!((weights[0] - 0.5).abs() < 1e-9);
                assert!((weights[1] - 0.5).abs() < 1e-9);
            }
            _ => panic!("expected optimal"),
        }
    }

    #[test]
    fn one_sided_pair_is_outside() {
        match max_min_barycentric(&pts(&[&[1.0], &[2.0]])).unwrap() {
            MaxMin::Optimal { t_star, .. } => assert!(t_star < -1e-9),
            MaxMin::InfeasibleSystem { .. } => {}
        }
    }

    #[test]
    fn single_zero_point_is_inside() {
        match max_min_barycentric(&pts(&[&[0.0, 0.0]])).unwrap() {
            MaxMin::Optimal { weights, t_star, .. } => {
                assert!((weights[0] - 1.0).abs() < 1e-9);
                assert!(t_star > 0.5);
            }
            _ => panic!("expected optimal"),
        }
    }

    #[test]
    fn lower_dimensional_span_uses_relative_interior() {
        // Points on the x-axis in R^2: 0 is in the relative interior.
        match max_min_barycentric(&pts(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap() {
            MaxMin::Optimal { t_star, .. } => assert!(t_star > 1e-9),
            _ => panic!("expected optimal"),
        }
    }

    #[test]
    fn shifted_cluster_is_infeasible_system() {
        // All points at (1,1): 0 is outside the affine hull.
        match max_min_barycentric(&pts(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap() {
            MaxMin::InfeasibleSystem { separator, margin } => {
                assert!(margin > 1e-9);
                let dot = separator[0] + separator[1];
                assert!(dot > 0.0);
            }
            MaxMin::Optimal { t_star, .. } => panic!("expected infeasible, got t*={t_star}"),
        }
    }

    #[test]
    fn asymmetric_two_atom_solution_is_unique() {
        // Unique solution of 2a - b = 0, a + b = 1.
        match max_min_barycentric(&pts(&[&[2.0], &[-1.0]])).unwrap() {
            MaxMin::Optimal { weights, .. } => {
                assert!((weights[0] - 1.0 / 3.0).abs() < 1e-9);
                assert!((weights[1] - 2.0 / 3.0).abs() < 1e-9);
            }
            _ => panic!("expected optimal"),
        }
    }

    #[test]
    fn boxed_solve_respects_bounds() {
        let points = pts(&[&[1.0], &[-1.0], &[0.0]]);
        let p = [0.45, 0.45, 0.10];
        let eta = 0.5;
        let lo: Vec<f64> = p.iter().map(|v| v * (1.0 - eta)).collect();
        let hi: Vec<f64> = p.iter().map(|v| v * (1.0 + eta)).collect();
        match max_min_barycentric_boxed(&points, &lo, &hi).unwrap() {
            Some(MaxMin::Optimal { weights, .. }) => {
                let s: f64 = weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                let m: f64 = weights.iter().zip(&points).map(|(q, x)| q * x[0]).sum();
                assert!(m.abs() < 1e-9);
                for (q, (l, h)) in weights.iter().zip(lo.iter().zip(&hi)) {
                    assert!(*q >= l - 1e-9 && *q <= h + 1e-9);
                }
            }
            other => panic!("expected boxed optimum, got {other:?}"),
        }
    }

    #[test]
    fn boxed_solve_reports_infeasible_box() {
        // Moment constraint needs q = (1/3, 2/3); a tight box around
        // (0.9, 0.1) cannot reach it.
        let points = pts(&[&[2.0], &[-1.0]]);
        let lo = [0.89, 0.09];
        let hi = [0.91, 0.11];
        assert!(max_min_barycentric_boxed(&points, &lo, &hi)
            .unwrap()
            .is_none());
    }
}
