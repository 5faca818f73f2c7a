//! Transmit-beamformer subproblem: maximize the concave quadratic surrogate
//! over the beam matrix subject to the K transformed-SINR constraints and
//! the trace power budget.
//!
//! The solver is consensus splitting with one variable copy per SINR
//! constraint plus one power-ball copy, mirroring the phase-shift solver:
//! each constraint copy is resolved by a scalar multiplier found by
//! bisection (rank-one updates via Sherman-Morrison), the power copy is a
//! ball projection. A dual active-set polish then drives the KKT residual
//! to solver precision; the polish root-finds the active multipliers with
//! the primal matrix given in closed form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::IsacError;
use crate::{CMat, CVec};

use super::surrogate::{FpAuxiliaries, QuadContext};

/// Assembled quadratic data of the transmit subproblem.
pub struct TransmitProblem {
    /// Clutter direction `a` with `A = ||x||^2 a a^H`.
    a_vec: CVec,
    a_scale: f64,
    /// Per-column linear terms (K communication columns then sensing).
    c_cols: Vec<CVec>,
    /// Per-user matched directions `e_k` with `B_k = |y_k|^2 e_k e_k^H`.
    e_vecs: Vec<CVec>,
    y: Vec<Complex64>,
    /// Per-user constraint offsets `tau_k + |y_k|^2 sigma^2`.
    rhs: Vec<f64>,
    power: f64,
    n_b: usize,
}

impl TransmitProblem {
    pub fn build(
        ctx: &QuadContext,
        aux: &FpAuxiliaries,
        thresholds: &[f64],
        power: f64,
    ) -> Self {
        let k_users = ctx.e_rows.len();
        let n_b = ctx.row_t.len();
        let a_vec = ctx.row_cl.map(|z| z.conj());
        let t_vec = ctx.row_t.map(|z| z.conj());
        let c_cols: Vec<CVec> = (0..k_users + 1)
            .map(|col| &t_vec * aux.x_fp[col].conj())
            .collect();
        let e_vecs: Vec<CVec> = ctx.e_rows.iter().map(|e| e.map(|z| z.conj())).collect();
        let rhs = (0..k_users)
            .map(|k| thresholds[k] + aux.y[k].norm_sqr() * ctx.noise)
            .collect();
        Self {
            a_vec,
            a_scale: aux.x_fp.norm_squared(),
            c_cols,
            e_vecs,
            y: aux.y.clone(),
            rhs,
            power,
            n_b,
        }
    }

    fn num_users(&self) -> usize {
        self.e_vecs.len()
    }

    /// Objective `sum_col -w^H A w + 2 Re{c^H w}`.
    pub fn objective(&self, w: &CMat) -> f64 {
        let mut total = 0.0;
        for col in 0..w.ncols() {
            let wc = w.column(col);
            let aw: Complex64 = self.a_vec.iter().zip(wc.iter()).map(|(a, x)| a.conj() * x).sum();
            let cw: Complex64 = self.c_cols[col]
                .iter()
                .zip(wc.iter())
                .map(|(c, x)| c.conj() * x)
                .sum();
            total += -self.a_scale * aw.norm_sqr() + 2.0 * cw.re;
        }
        total
    }

    /// Constraint value `g_k(W)`; feasibility means `g_k >= rhs_k`.
    pub fn constraint(&self, w: &CMat, k: usize) -> f64 {
        let e = &self.e_vecs[k];
        let y2 = self.y[k].norm_sqr();
        let mut lin = Complex64::new(0.0, 0.0);
        let mut quad = 0.0;
        for col in 0..w.ncols() {
            let ew: Complex64 = e.iter().zip(w.column(col).iter()).map(|(a, x)| a.conj() * x).sum();
            if col == k {
                lin = self.y[k].conj() * ew;
            } else {
                quad += y2 * ew.norm_sqr();
            }
        }
        2.0 * lin.re - quad
    }

    /// Clutter direction vector (read-only; oracle computations).
    pub fn gradient_helper_a(&self) -> &CVec {
        &self.a_vec
    }

    /// Quadratic scale of the clutter term (read-only; oracle computations).
    pub fn gradient_helper_scale(&self) -> f64 {
        self.a_scale
    }

    /// Linear term of one beam column (read-only; oracle computations).
    pub fn gradient_helper_c(&self, col: usize) -> &CVec {
        &self.c_cols[col]
    }

    /// Worst constraint slack `min_k (g_k - rhs_k)` and the power slack.
    pub fn feasibility(&self, w: &CMat) -> (f64, f64) {
        let worst = (0..self.num_users())
            .map(|k| self.constraint(w, k) - self.rhs[k])
            .fold(f64::INFINITY, f64::min);
        let power_slack = self.power - w.iter().map(|z| z.norm_sqr()).sum::<f64>();
        (worst, power_slack)
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransmitParams {
    pub rho: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for TransmitParams {
    fn default() -> Self {
        Self {
            rho: 1.5,
            max_iterations: 4000,
            tolerance: 1e-10,
        }
    }
}

/// Transmit solution with the verified optimality residual.
#[derive(Debug, Clone)]
pub struct TransmitSolution {
    pub w: CMat,
    pub objective: f64,
    /// Scale-normalized KKT residual at exit.
    pub kkt_residual: f64,
    pub admm_iterations: usize,
}

/// Solves the transmit subproblem. Errors with [`IsacError::Infeasible`]
/// when the constraint set is empty at the current phase shifts / combiner.
pub fn solve_transmit_beamformer(
    problem: &TransmitProblem,
    params: &TransmitParams,
) -> Result<TransmitSolution, IsacError> {
    let n_b = problem.n_b;
    let k_users = problem.num_users();
    let n_cols = k_users + 1;
    let copies = k_users + 1; // one per SINR constraint plus the power ball

    // Degenerate matched directions make the constraints unreachable.
    for k in 0..k_users {
        if problem.e_vecs[k].norm() * problem.y[k].norm() < 1e-300 {
            return Err(IsacError::Infeasible(format!(
                "user {k} has a vanishing matched direction"
            )));
        }
    }

    let mut w = matched_start(problem);
    let mut z: Vec<CMat> = vec![w.clone(); copies];
    let mut u: Vec<CMat> = vec![CMat::zeros(n_b, n_cols); copies];
    let rho = params.rho;
    let mut prev_obj = problem.objective(&w);
    let mut iterations = 0;

    for it in 0..params.max_iterations {
        iterations = it + 1;
        // W-update: per-column rank-one-shifted ridge solve.
        // (A + copies*rho I) w = c + rho sum(z + u), A = s a a^H.
        let denom_base = copies as f64 * rho;
        for col in 0..n_cols {
            let mut rhs = problem.c_cols[col].clone();
            for j in 0..copies {
                rhs += (z[j].column(col) + u[j].column(col)) * Complex64::new(rho, 0.0);
            }
            let wc = sherman_solve(&problem.a_vec, problem.a_scale, denom_base, &rhs);
            w.set_column(col, &wc);
        }
        // Constraint copies.
        for k in 0..k_users {
            let v = &w - &u[k];
            let zk = project_constraint(problem, k, &v)?;
            u[k] += &zk - &w;
            z[k] = zk;
        }
        // Power-ball copy.
        {
            let v = &w - &u[copies - 1];
            let tp: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            let zk = if tp <= problem.power {
                v.clone()
            } else {
                &v * Complex64::new((problem.power / tp).sqrt(), 0.0)
            };
            u[copies - 1] += &zk - &w;
            z[copies - 1] = zk;
        }
        let obj = problem.objective(&w);
        let consensus: f64 = z
            .iter()
            .map(|zi| (zi - &w).iter().map(|x| x.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let scale = obj.abs().max(1.0);
        if (obj - prev_obj).abs() <= params.tolerance * scale
            && consensus <= 1e-8 * w.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-30)
        {
            break;
        }
        prev_obj = obj;
    }

    // Use the feasible power copy as the primal candidate, then polish.
    let candidate = z[copies - 1].clone();
    let (w_polished, _) = polish(problem, &candidate);
    let final_w = if kkt_check(problem, &w_polished).0 <= kkt_check(problem, &candidate).0 {
        w_polished
    } else {
        candidate
    };
    let (kkt_residual, feas_worst) = kkt_check(problem, &final_w);
    if feas_worst < -1e-6 {
        return Err(IsacError::Infeasible(format!(
            "transmit constraints violated by {feas_worst:.3e} at exit"
        )));
    }
    Ok(TransmitSolution {
        objective: problem.objective(&final_w),
        w: final_w,
        kkt_residual,
        admm_iterations: iterations,
    })
}

/// Matched starting point: each communication column along its user's
/// matched direction, the sensing column along the target direction, scaled
/// into the power ball.
fn matched_start(problem: &TransmitProblem) -> CMat {
    let n_b = problem.n_b;
    let k_users = problem.num_users();
    let mut w = CMat::zeros(n_b, k_users + 1);
    for k in 0..k_users {
        let e = &problem.e_vecs[k];
        let nrm = e.norm().max(1e-300);
        w.set_column(k, &(e * Complex64::new(1.0 / nrm, 0.0)));
    }
    let c_s = &problem.c_cols[k_users];
    let nrm = c_s.norm();
    if nrm > 1e-300 {
        w.set_column(k_users, &(c_s * Complex64::new(1.0 / nrm, 0.0)));
    }
    let tp: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    if tp > 0.0 {
        w.scale_mut((problem.power / tp).sqrt());
    }
    w
}

/// Solves `(s a a^H + d I) x = rhs` by Sherman-Morrison.
fn sherman_solve(a: &CVec, s: f64, d: f64, rhs: &CVec) -> CVec {
    let base = rhs / Complex64::new(d, 0.0);
    if s == 0.0 {
        return base;
    }
    let a_rhs: Complex64 = a.iter().zip(rhs.iter()).map(|(ai, r)| ai.conj() * r).sum();
    let denom = d * (d + s * a.norm_squared());
    &base - &(a * (a_rhs * Complex64::new(s / denom, 0.0)))
}

/// Projection of `v` onto one transformed-SINR constraint set: smallest
/// multiplier whose stationary point satisfies the constraint.
fn project_constraint(problem: &TransmitProblem, k: usize, v: &CMat) -> Result<CMat, IsacError> {
    let g0 = problem.constraint(v, k);
    if g0 >= problem.rhs[k] {
        return Ok(v.clone());
    }
    let e = &problem.e_vecs[k];
    let y = problem.y[k];
    let y2 = y.norm_sqr();
    let e_norm2 = e.norm_squared();
    let b = e * y; // linear direction of column k
    let b_norm2 = y2 * e_norm2;
    if b_norm2 < 1e-300 {
        return Err(IsacError::Infeasible(format!(
            "constraint {k} cannot be reached: zero matched direction"
        )));
    }
    let z_at = |lam: f64| -> CMat {
        let mut z = v.clone();
        let ncols = v.ncols();
        for col in 0..ncols {
            if col == k {
                let zc = v.column(col) + &b * Complex64::new(lam, 0.0);
                z.set_column(col, &zc);
            } else {
                // (I + lam |y|^2 e e^H)^{-1} v_col via Sherman-Morrison.
                let ev: Complex64 = e
                    .iter()
                    .zip(v.column(col).iter())
                    .map(|(a, x)| a.conj() * x)
                    .sum();
                let shrink = lam * y2 / (1.0 + lam * y2 * e_norm2);
                let zc = v.column(col) - e * (ev * Complex64::new(shrink, 0.0));
                z.set_column(col, &zc);
            }
        }
        z
    };
    let g = |lam: f64| -> f64 { problem.constraint(&z_at(lam), k) };
    let target = problem.rhs[k];
    let mut hi = 1.0;
    let mut guard = 0;
    while g(hi) < target {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(IsacError::Infeasible(format!(
                "constraint {k} bisection failed to bracket"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(z_at(hi))
}

/// Closed-form primal at fixed multipliers: column k sees the ridge
/// `A + nu I + sum_{j active, j != k} lam_j B_j` and the linear term
/// `c_k + lam_k b_k` (for active k).
fn primal_at(
    problem: &TransmitProblem,
    active: &[usize],
    lam: &[f64],
    nu: f64,
) -> CMat {
    let n_b = problem.n_b;
    let k_users = problem.num_users();
    let mut w = CMat::zeros(n_b, k_users + 1);
    for col in 0..k_users + 1 {
        let mut m = CMat::identity(n_b, n_b) * Complex64::new(nu, 0.0);
        for i in 0..n_b {
            for j in 0..n_b {
                m[(i, j)] += Complex64::new(problem.a_scale, 0.0)
                    * problem.a_vec[i]
                    * problem.a_vec[j].conj();
            }
        }
        for (idx, &j_c) in active.iter().enumerate() {
            if j_c == col {
                continue;
            }
            let y2 = problem.y[j_c].norm_sqr();
            let e = &problem.e_vecs[j_c];
            for i in 0..n_b {
                for j in 0..n_b {
                    m[(i, j)] += Complex64::new(lam[idx] * y2, 0.0) * e[i] * e[j].conj();
                }
            }
        }
        let mut rhs = problem.c_cols[col].clone();
        if let Some(idx) = active.iter().position(|&j_c| j_c == col) {
            rhs += (&problem.e_vecs[col] * problem.y[col]) * Complex64::new(lam[idx], 0.0);
        }
        match m.lu().solve(&rhs) {
            Some(wc) => w.set_column(col, &wc),
            None => w.set_column(col, &CVec::zeros(n_b)),
        }
    }
    w
}

/// Dual active-set polish: root-find the active multipliers (power always
/// tried active first) with damped Newton on finite-difference Jacobians.
fn polish(problem: &TransmitProblem, w0: &CMat) -> (CMat, f64) {
    let k_users = problem.num_users();
    let act_tol = 1e-5;
    let mut active: Vec<usize> = (0..k_users)
        .filter(|&k| problem.constraint(w0, k) - problem.rhs[k] < act_tol * problem.rhs[k].abs().max(1.0))
        .collect();
    let mut best = (w0.clone(), kkt_check(problem, w0).0);

    for _round in 0..6 {
        let na = active.len();
        // Unknowns: lam (na) and nu, seeded from a least-squares fit at the
        // candidate point; residuals are normalized per constraint scale.
        let (lam0, nu0) = fit_multipliers(problem, w0, &active);
        let mut theta = vec![0.0f64; na + 1];
        for (i, l) in lam0.iter().enumerate() {
            theta[i] = l.max(0.0);
        }
        theta[na] = nu0.abs().max(1e-6);
        let residual = |theta: &[f64]| -> Vec<f64> {
            let lam = &theta[..na];
            let nu = theta[na].max(1e-300);
            let w = primal_at(problem, &active, lam, nu);
            let mut r: Vec<f64> = active
                .iter()
                .map(|&k| {
                    (problem.constraint(&w, k) - problem.rhs[k])
                        / problem.rhs[k].abs().max(1.0)
                })
                .collect();
            let tp: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            r.push((tp - problem.power) / problem.power);
            r
        };
        let mut ok = true;
        for _newton in 0..80 {
            let r = residual(&theta);
            let err = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if err <= 1e-12 {
                break;
            }
            // Finite-difference Jacobian.
            let n = theta.len();
            let mut jac = vec![vec![0.0; n]; n];
            for j in 0..n {
                let h = 1e-6 * theta[j].abs().max(1e-6);
                let mut tp = theta.clone();
                tp[j] += h;
                let rp = residual(&tp);
                for i in 0..n {
                    jac[i][j] = (rp[i] - r[i]) / h;
                }
            }
            match solve_dense(&jac, &r) {
                Some(step) => {
                    let mut damp = 1.0;
                    let base_err = err;
                    loop {
                        let cand: Vec<f64> = theta
                            .iter()
                            .zip(step.iter())
                            .map(|(t, s)| t - damp * s)
                            .collect();
                        let rc = residual(&cand);
                        let ec = rc.iter().map(|x| x.abs()).fold(0.0, f64::max);
                        if ec < base_err || damp < 1e-4 {
                            theta = cand;
                            break;
                        }
                        damp *= 0.5;
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        // Multiplier signs decide active-set changes.
        let lam = &theta[..na];
        let nu = theta[na];
        if let Some(drop_idx) = lam.iter().position(|&l| l < -1e-12) {
            active.remove(drop_idx);
            continue;
        }
        if nu < -1e-12 {
            // Power inactive is not representable here; keep the best so far.
            break;
        }
        let w = primal_at(problem, &active, lam, nu.max(0.0));
        // Add a violated inactive constraint if any.
        let mut violated = None;
        for k in 0..k_users {
            if active.contains(&k) {
                continue;
            }
            if problem.constraint(&w, k) - problem.rhs[k] < -1e-10 {
                violated = Some(k);
                break;
            }
        }
        let res = kkt_check(problem, &w).0;
        if res < best.1 {
            best = (w, res);
        }
        match violated {
            Some(k) => active.push(k),
            None => break,
        }
    }
    best
}

/// Scale-normalized KKT residual and the worst constraint slack.
///
/// Residual components: per-column stationarity of the Lagrangian
/// (normalized by the linear-term norm), primal violations (constraints
/// normalized by `max(1, |rhs|)`, power by the budget), and complementary
/// slackness.
pub fn kkt_check(problem: &TransmitProblem, w: &CMat) -> (f64, f64) {
    let k_users = problem.num_users();
    // Recover multipliers by least squares against the stationarity system:
    // for each column: 2(A + nu I + sum_j lam_j B_j) w = 2 (c + lam_col b).
    // With rank-one structure only lam and nu enter; estimate them from the
    // active constraints via the same closed form used by the polish.
    let act_tol = 1e-6;
    let active: Vec<usize> = (0..k_users)
        .filter(|&k| {
            (problem.constraint(w, k) - problem.rhs[k]).abs()
                < act_tol * problem.rhs[k].abs().max(1.0) * 10.0 + 1e-8
        })
        .collect();
    // Fit (lam, nu) minimizing the stationarity residual over all columns.
    let (lam, nu) = fit_multipliers(problem, w, &active);
    let mut stat_num = 0.0f64;
    let mut stat_den = 0.0f64;
    for col in 0..k_users + 1 {
        let mut grad = CVec::zeros(problem.n_b);
        // A w + nu w + sum_j lam_j B_j w - c - lam_col b_col
        let aw: Complex64 = problem
            .a_vec
            .iter()
            .zip(w.column(col).iter())
            .map(|(a, x)| a.conj() * x)
            .sum();
        grad += &problem.a_vec * (aw * Complex64::new(problem.a_scale, 0.0));
        grad += w.column(col) * Complex64::new(nu, 0.0);
        for (idx, &j_c) in active.iter().enumerate() {
            if j_c == col {
                continue;
            }
            let e = &problem.e_vecs[j_c];
            let y2 = problem.y[j_c].norm_sqr();
            let ew: Complex64 = e.iter().zip(w.column(col).iter()).map(|(a, x)| a.conj() * x).sum();
            grad += e * (ew * Complex64::new(lam[idx] * y2, 0.0));
        }
        grad -= &problem.c_cols[col];
        if let Some(idx) = active.iter().position(|&j_c| j_c == col) {
            grad -= (&problem.e_vecs[col] * problem.y[col]) * Complex64::new(lam[idx], 0.0);
        }
        stat_num = stat_num.max(grad.norm());
        stat_den = stat_den
            .max(problem.c_cols[col].norm())
            .max(w.column(col).norm() * nu.abs());
    }
    let stationarity = stat_num / stat_den.max(1e-300);

    let mut worst_slack = f64::INFINITY;
    let mut primal = 0.0f64;
    for k in 0..k_users {
        let slack = problem.constraint(w, k) - problem.rhs[k];
        worst_slack = worst_slack.min(slack / problem.rhs[k].abs().max(1.0));
        primal = primal.max((-slack / problem.rhs[k].abs().max(1.0)).max(0.0));
    }
    let tp: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    primal = primal.max((tp - problem.power).max(0.0) / problem.power);
    // Complementary slackness for the power constraint.
    let comp_power = if nu > 1e-9 {
        (problem.power - tp).abs() / problem.power
    } else {
        0.0
    };
    let mut comp = comp_power;
    for (idx, &k) in active.iter().enumerate() {
        if lam[idx] > 1e-9 {
            comp = comp.max(
                (problem.constraint(w, k) - problem.rhs[k]).abs()
                    / problem.rhs[k].abs().max(1.0),
            );
        }
    }
    let neg_mult = lam.iter().cloned().fold(0.0f64, |acc, l| acc.max(-l)).max(-nu.min(0.0));
    (stationarity.max(primal).max(comp).max(neg_mult), worst_slack)
}

/// Least-squares fit of the active multipliers from the stationarity system.
fn fit_multipliers(problem: &TransmitProblem, w: &CMat, active: &[usize]) -> (Vec<f64>, f64) {
    // Unknowns: lam (per active constraint) and nu. Build the real least
    // squares from all column stationarity equations stacked.
    let k_users = problem.num_users();
    let n_b = problem.n_b;
    let na = active.len();
    let rows = 2 * n_b * (k_users + 1);
    let cols = na + 1;
    let mut mat = vec![vec![0.0f64; cols]; rows];
    let mut rhs = vec![0.0f64; rows];
    for col in 0..k_users + 1 {
        // residual(col) = A w + nu w + sum lam_j B_j w - c - lam_col b = 0
        let aw: Complex64 = problem
            .a_vec
            .iter()
            .zip(w.column(col).iter())
            .map(|(a, x)| a.conj() * x)
            .sum();
        let base = &problem.a_vec * (aw * Complex64::new(problem.a_scale, 0.0));
        for i in 0..n_b {
            let r0 = 2 * (col * n_b + i);
            // constant part moves to rhs: c - A w
            let cst = problem.c_cols[col][i] - base[i];
            rhs[r0] = cst.re;
            rhs[r0 + 1] = cst.im;
            // nu coefficient: w[i, col]
            mat[r0][na] = w[(i, col)].re;
            mat[r0 + 1][na] = w[(i, col)].im;
            for (idx, &j_c) in active.iter().enumerate() {
                let coeff = if j_c == col {
                    // -lam_col b term
                    -(problem.e_vecs[col][i] * problem.y[col])
                } else {
                    let e = &problem.e_vecs[j_c];
                    let y2 = problem.y[j_c].norm_sqr();
                    let ew: Complex64 = e
                        .iter()
                        .zip(w.column(col).iter())
                        .map(|(a, x)| a.conj() * x)
                        .sum();
                    e[i] * ew * y2
                };
                mat[r0][idx] = coeff.re;
                mat[r0 + 1][idx] = coeff.im;
            }
        }
    }
    // Normal equations.
    let mut ata = vec![vec![0.0f64; cols]; cols];
    let mut atb = vec![0.0f64; cols];
    for r in 0..rows {
        for i in 0..cols {
            atb[i] += mat[r][i] * rhs[r];
            for j in 0..cols {
                ata[i][j] += mat[r][i] * mat[r][j];
            }
        }
    }
    match solve_dense(&ata, &atb) {
        Some(sol) => {
            let lam = sol[..na].to_vec();
            let nu = sol[na];
            (lam, nu)
        }
        None => (vec![0.0; na], 0.0),
    }
}

/// Dense Gaussian elimination with partial pivoting for the tiny real
/// systems of the polish.
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n_b: usize, k_users: usize, threshold: f64) -> TransmitProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cv = |n: usize| {
            CVec::from_fn(n, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        };
        let row_t = cv(n_b);
        let row_cl = cv(n_b);
        let e_rows: Vec<CVec> = (0..k_users).map(|_| cv(n_b) * Complex64::new(3.0, 0.0)).collect();
        let ctx = QuadContext {
            row_t,
            row_cl,
            e_rows,
            noise: 1e-3,
        };
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed + 1);
        let x_fp = CVec::from_fn(k_users + 1, |_, _| {
            Complex64::new(rng2.gen_range(-1.0..1.0), rng2.gen_range(-1.0..1.0))
        });
        let y = (0..k_users)
            .map(|_| Complex64::new(rng2.gen_range(0.2..1.0), rng2.gen_range(-0.5..0.5)))
            .collect();
        let aux = FpAuxiliaries { x_fp, y };
        TransmitProblem::build(&ctx, &aux, &vec![threshold; k_users], 1.0)
    }

    #[test]
    fn unconstrained_sensing_only_hits_power_ball() {
        // K = 0: single sensing column, ridge solution rescaled onto the
        // power sphere (the clutter quadratic is rank-one so the budget is
        // always active for a generic linear term).
        let problem = random_problem(3, 3, 0, 0.0);
        let sol = solve_transmit_beamformer(&problem, &TransmitParams::default()).unwrap();
        let tp: f64 = sol.w.iter().map(|z| z.norm_sqr()).sum();
        assert!(tp <= 1.0 + 1e-9);
        assert!(sol.kkt_residual < 1e-6, "kkt {}", sol.kkt_residual);
        // Compare with a direct multiplier bisection on (A + nu I) w = c.
        let c = &problem.c_cols[0];
        let norm_at = |nu: f64| -> f64 {
            sherman_solve(&problem.a_vec, problem.a_scale, nu, c).norm()
        };
        let mut lo = 1e-9;
        let mut hi = 1.0;
        while norm_at(hi) > 1.0 {
            hi *= 2.0;
        }
        while norm_at(lo) < 1.0 {
            lo /= 2.0;
            if lo < 1e-15 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w_ref = sherman_solve(&problem.a_vec, problem.a_scale, 0.5 * (lo + hi), c);
        let obj_ref = problem.objective(&CMat::from_columns(&[w_ref]));
        assert!(
            (sol.objective - obj_ref).abs() <= 1e-6 * obj_ref.abs().max(1.0),
            "{} vs {}",
            sol.objective,
            obj_ref
        );
    }

    #[test]
    fn constrained_solution_feasible_with_small_kkt() {
        for seed in 0..10u64 {
            let problem = random_problem(seed, 2, 1, 0.5);
            let sol = solve_transmit_beamformer(&problem, &TransmitParams::default()).unwrap();
            let (worst, power_slack) = problem.feasibility(&sol.w);
            assert!(worst >= -1e-7, "seed {seed}: constraint slack {worst}");
            assert!(power_slack >= -1e-9, "seed {seed}: power slack {power_slack}");
            assert!(sol.kkt_residual < 1e-6, "seed {seed}: kkt {}", sol.kkt_residual);
        }
    }

    #[test]
    fn power_always_within_budget() {
        for seed in 20..30u64 {
            let problem = random_problem(seed, 3, 2, 0.2);
            if let Ok(sol) = solve_transmit_beamformer(&problem, &TransmitParams::default()) {
                let tp: f64 = sol.w.iter().map(|z| z.norm_sqr()).sum();
                assert!(tp <= 1.0 + 1e-9, "seed {seed}: power {tp}");
            }
        }
    }
}
