//! Phase-shift subproblem: maximize the sensing surrogate over unit-modulus
//! phase vectors subject to the transformed per-user SINR constraints, via
//! consensus splitting.
//!
//! One consensus copy exists per SINR constraint plus one for the
//! unit-modulus set. Internally the solver works in the conjugated phase
//! vector so that every quadratic form is a standard Hermitian form; the
//! conversion happens at the boundary.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, PhaseShifts};
use crate::error::IsacError;
use crate::scene::SceneConfig;
use crate::{CMat, CVec};

use super::surrogate::FpAuxiliaries;

/// Assembled quadratic data of the phase subproblem, in the conjugated
/// variable `u = conj(xi)`.
pub struct PhaseProblem {
    /// Clutter quadratic `A = ||x||^2 G G^H` (positive semidefinite).
    a: CMat,
    /// Target linear term.
    c: CVec,
    /// Per-user linear terms.
    b: Vec<CVec>,
    /// Per-user interference quadratics.
    b_quad: Vec<CMat>,
    /// Per-user constraint offsets `tau_k + |y_k|^2 sigma^2`.
    rhs: Vec<f64>,
    n_i: usize,
}

impl PhaseProblem {
    pub fn build(
        config: &SceneConfig,
        realization: &ChannelRealization,
        w: &CMat,
        r_co: &CVec,
        aux: &FpAuxiliaries,
        thresholds: &[f64],
    ) -> Self {
        let n_i = config.n_i;
        let n_cols = w.ncols();
        let k_users = realization.num_users();
        let m_t = realization.target_matrix(config);
        let m_cl = realization.clutter_matrix(config);
        // Rows r_co^H M as element-wise weights.
        let weight = |mat: &CMat| -> CVec {
            CVec::from_fn(n_i, |m, _| {
                (0..config.n_s)
                    .map(|s| r_co[s].conj() * mat[(s, m)])
                    .sum()
            })
        };
        let w_t = weight(&m_t);
        let w_cl = weight(&m_cl);
        let hw = realization.h_bi.clone() * w; // N_I x (K+1)

        // Clutter map G[m, col] = (r^H M_cl)[m] * (H W)[m, col].
        let g = CMat::from_fn(n_i, n_cols, |m, col| w_cl[m] * hw[(m, col)]);
        let a = &g * g.adjoint() * Complex64::new(aux.x_fp.norm_squared(), 0.0);
        // Target linear term c[m] = (r^H M_t)[m] * (H W x)[m].
        let hwx = &hw * &aux.x_fp;
        let c = CVec::from_fn(n_i, |m, _| w_t[m] * hwx[m]);

        let mut b = Vec::with_capacity(k_users);
        let mut b_quad = Vec::with_capacity(k_users);
        let mut rhs = Vec::with_capacity(k_users);
        for k in 0..k_users {
            // p_{k,col}[m] = conj(h_k[m]) * (H w_col)[m].
            let p = CMat::from_fn(n_i, n_cols, |m, col| {
                realization.h_iu[k][m].conj() * hw[(m, col)]
            });
            let y = aux.y[k];
            b.push(p.column(k) * y.conj());
            let mut quad = CMat::zeros(n_i, n_i);
            for col in 0..n_cols {
                if col == k {
                    continue;
                }
                let pc = p.column(col);
                for i in 0..n_i {
                    for j in 0..n_i {
                        quad[(i, j)] += pc[i] * pc[j].conj();
                    }
                }
            }
            b_quad.push(quad * Complex64::new(y.norm_sqr(), 0.0));
            rhs.push(thresholds[k] + y.norm_sqr() * config.noise_power);
        }
        Self {
            a,
            c,
            b,
            b_quad,
            rhs,
            n_i,
        }
    }

    /// Builds a problem directly from its quadratic pieces (synthetic
    /// instances and oracle comparisons).
    pub fn from_parts(
        a: CMat,
        c: CVec,
        b: Vec<CVec>,
        b_quad: Vec<CMat>,
        rhs: Vec<f64>,
    ) -> Self {
        let n_i = a.nrows();
        Self {
            a,
            c,
            b,
            b_quad,
            rhs,
            n_i,
        }
    }

    /// Surrogate objective `-u^H A u + 2 Re{u^H c}` (to maximize).
    pub fn objective(&self, u: &CVec) -> f64 {
        let quad = (u.adjoint() * &self.a * u)[(0, 0)].re;
        let lin: Complex64 = u.iter().zip(self.c.iter()).map(|(a, b)| a.conj() * b).sum();
        -quad + 2.0 * lin.re
    }

    /// Constraint value of user `k`; feasibility is `g_k(u) >= rhs_k`.
    pub fn constraint(&self, u: &CVec, k: usize) -> f64 {
        let lin: Complex64 = u.iter().zip(self.b[k].iter()).map(|(a, b)| a.conj() * b).sum();
        let quad = (u.adjoint() * &self.b_quad[k] * u)[(0, 0)].re;
        2.0 * lin.re - quad
    }

    pub fn num_users(&self) -> usize {
        self.b.len()
    }
}

/// Solver controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhaseParams {
    /// Consensus penalty.
    pub rho: f64,
    /// Stop when the augmented objective changes less than this.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            rho: 1.5,
            epsilon: 1e-6,
            max_iterations: 3000,
        }
    }
}

/// Phase solution and its consensus diagnostics.
#[derive(Debug, Clone)]
pub struct PhaseSolution {
    pub xi: PhaseShifts,
    /// `max_i || z_i - xi ||_inf` at exit.
    pub consensus_residual: f64,
    pub iterations: usize,
    /// Surrogate objective at the projected solution.
    pub objective: f64,
}

/// Runs the consensus splitting from a warm-start phase vector.
pub fn solve_phase_shifts(
    problem: &PhaseProblem,
    xi0: &PhaseShifts,
    params: &PhaseParams,
) -> Result<PhaseSolution, IsacError> {
    let n_i = problem.n_i;
    let k_users = problem.num_users();
    let copies = k_users + 1;
    let rho = params.rho;

    // Work in the conjugated variable.
    let mut u = CVec::from_iterator(n_i, xi0.entries().iter().map(|z| z.conj()));
    let mut z: Vec<CVec> = vec![u.clone(); copies];
    let mut mu: Vec<CVec> = vec![CVec::zeros(n_i); copies];

    // Ridge factor of the u-update: (copies * rho I + A).
    let mut ridge = problem.a.clone();
    for i in 0..n_i {
        ridge[(i, i)] += Complex64::new(copies as f64 * rho, 0.0);
    }
    let ridge_lu = ridge.lu();

    let mut prev_aug = f64::INFINITY;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 0..params.max_iterations {
        iterations = it + 1;
        // Step 1: unconstrained quadratic in u.
        let mut rhs = problem.c.clone();
        for i in 0..copies {
            rhs += (&z[i] + &mu[i]) * Complex64::new(rho, 0.0);
        }
        u = ridge_lu
            .solve(&rhs)
            .ok_or(IsacError::NumericalInconsistency(0.0))?;
        // Step 2: per-constraint copies via multiplier bisection.
        for k in 0..k_users {
            let v = &u - &mu[k];
            z[k] = constraint_copy(problem, k, &v)?;
        }
        // Step 3: unit-modulus copy by entrywise phase projection.
        {
            let v = &u - &mu[copies - 1];
            z[copies - 1] = CVec::from_iterator(
                n_i,
                v.iter().map(|x| {
                    if x.norm() == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        x / x.norm()
                    }
                }),
            );
        }
        // Step 4: dual updates.
        for i in 0..copies {
            let delta = &z[i] - &u;
            mu[i] += &delta;
        }
        residual = z
            .iter()
            .map(|zi| (zi - &u).iter().map(|x| x.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        // Augmented objective (the minimization form).
        let mut aug = -problem.objective(&u);
        for i in 0..copies {
            aug += rho * (&z[i] - &u + &mu[i]).norm_squared();
        }
        if (prev_aug - aug).abs() <= params.epsilon * aug.abs().max(1.0) && residual < 1e-6 {
            break;
        }
        prev_aug = aug;
    }

    // Final projection to exact unit modulus, then back to xi.
    let u_proj = CVec::from_iterator(
        n_i,
        u.iter().map(|x| {
            if x.norm() == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                x / x.norm()
            }
        }),
    );
    let objective = problem.objective(&u_proj);
    let xi = PhaseShifts::new(u_proj.iter().map(|z| z.conj()).collect())
        .expect("projected phases are unit modulus");
    Ok(PhaseSolution {
        xi,
        consensus_residual: residual,
        iterations,
        objective,
    })
}

/// Projection of `v` onto one transformed-SINR constraint set:
/// `z = (I + lam B)^{-1} (v + lam b)` with the smallest `lam >= 0` that
/// reaches the constraint.
fn constraint_copy(problem: &PhaseProblem, k: usize, v: &CVec) -> Result<CVec, IsacError> {
    if problem.constraint(v, k) >= problem.rhs[k] {
        return Ok(v.clone());
    }
    let n_i = problem.n_i;
    let z_at = |lam: f64| -> Option<CVec> {
        let mut m = CMat::identity(n_i, n_i);
        m += &problem.b_quad[k] * Complex64::new(lam, 0.0);
        let rhs = v + &problem.b[k] * Complex64::new(lam, 0.0);
        m.lu().solve(&rhs)
    };
    let g = |lam: f64| -> Option<f64> { z_at(lam).map(|z| problem.constraint(&z, k)) };
    let target = problem.rhs[k];
    // The limit of g as lam grows is the unconstrained maximum of g; if even
    // that cannot reach the target the constraint is infeasible here.
    let mut hi = 1.0;
    let mut guard = 0;
    loop {
        match g(hi) {
            Some(val) if val >= target => break,
            Some(_) => {
                hi *= 4.0;
                guard += 1;
                if guard > 60 {
                    return Err(IsacError::Infeasible(format!(
                        "phase constraint {k} cannot be reached (bisection bracket failed)"
                    )));
                }
            }
            None => {
                return Err(IsacError::NumericalInconsistency(hi));
            }
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match g(mid) {
            Some(val) if val < target => lo = mid,
            Some(_) => hi = mid,
            None => return Err(IsacError::NumericalInconsistency(mid)),
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    z_at(hi).ok_or(IsacError::NumericalInconsistency(hi))
}

/// Exhaustive reference for tiny instances: grid over per-element phases
/// followed by cyclic coordinate refinement. Test oracle.
pub fn exhaustive_phase_oracle(problem: &PhaseProblem, grid_steps: usize) -> (CVec, f64) {
    let n_i = problem.n_i;
    assert!(n_i <= 3, "oracle cost grows as steps^N_I");
    let mut best = (CVec::from_element(n_i, Complex64::new(1.0, 0.0)), f64::NEG_INFINITY);
    let mut idx = vec![0usize; n_i];
    loop {
        let u = CVec::from_iterator(
            n_i,
            idx.iter()
                .map(|&i| Complex64::cis(std::f64::consts::TAU * i as f64 / grid_steps as f64)),
        );
        let feasible = (0..problem.num_users()).all(|k| problem.constraint(&u, k) >= problem.rhs[k] - 1e-9);
        if feasible {
            let obj = problem.objective(&u);
            if obj > best.1 {
                best = (u, obj);
            }
        }
        // Advance the mixed-radix counter.
        let mut pos = 0;
        loop {
            idx[pos] += 1;
            if idx[pos] < grid_steps {
                break;
            }
            idx[pos] = 0;
            pos += 1;
            if pos == n_i {
                // Local refinement by cyclic single-phase golden search.
                let refined = refine_phases(problem, &best.0);
                let obj = problem.objective(&refined);
                return if obj > best.1 { (refined, obj) } else { best };
            }
        }
    }
}

fn refine_phases(problem: &PhaseProblem, start: &CVec) -> CVec {
    let n_i = start.len();
    let mut u = start.clone();
    let feasible =
        |v: &CVec| (0..problem.num_users()).all(|k| problem.constraint(v, k) >= problem.rhs[k] - 1e-9);
    for _sweep in 0..60 {
        let mut improved = false;
        for m in 0..n_i {
            let base = u[m].arg();
            let mut best_phase = base;
            let mut best_obj = problem.objective(&u);
            let mut width = 0.4;
            for _shrink in 0..30 {
                for &cand in &[best_phase - width, best_phase + width] {
                    let mut v = u.clone();
                    v[m] = Complex64::cis(cand);
                    if feasible(&v) {
                        let obj = problem.objective(&v);
                        if obj > best_obj {
                            best_obj = obj;
                            best_phase = cand;
                            improved = true;
                        }
                    }
                }
                width *= 0.6;
            }
            u[m] = Complex64::cis(best_phase);
        }
        if !improved {
            break;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_problem(seed: u64, n_i: usize, k_users: usize, tighten: f64) -> PhaseProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fn cv(rng: &mut ChaCha8Rng, n: usize) -> CVec {
            CVec::from_fn(n, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        }
        let mut g = CMat::zeros(n_i, n_i);
        for v in g.iter_mut() {
            *v = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        }
        let a = &g * g.adjoint();
        let c = cv(&mut rng, n_i);
        let mut b = Vec::new();
        let mut b_quad = Vec::new();
        let mut rhs = Vec::new();
        for _ in 0..k_users {
            let dir = cv(&mut rng, n_i);
            let q = CMat::from_fn(n_i, n_i, |i, j| dir[i] * dir[j].conj())
                * Complex64::new(0.05, 0.0);
            let lin = cv(&mut rng, n_i);
            // Threshold set relative to the all-ones point so the constraint
            // is active but attainable.
            let ones = CVec::from_element(n_i, Complex64::new(1.0, 0.0));
            let lin_val: Complex64 = ones.iter().zip(lin.iter()).map(|(a, b)| a.conj() * b).sum();
            let quad_val = (ones.adjoint() * &q * &ones)[(0, 0)].re;
            rhs.push(2.0 * lin_val.re - quad_val - tighten);
            b.push(lin);
            b_quad.push(q);
        }
        PhaseProblem {
            a,
            c,
            b,
            b_quad,
            rhs,
            n_i,
        }
    }

    #[test]
    fn pure_consensus_trivial_case() {
        // A = 0, c = 0, no constraints: any unit-modulus point is optimal
        // and the consensus residual collapses.
        let n_i = 3;
        let problem = PhaseProblem {
            a: CMat::zeros(n_i, n_i),
            c: CVec::zeros(n_i),
            b: vec![],
            b_quad: vec![],
            rhs: vec![],
            n_i,
        };
        let xi0 = PhaseShifts::from_phases(&[0.3, -0.7, 2.2]);
        let sol = solve_phase_shifts(&problem, &xi0, &PhaseParams::default()).unwrap();
        assert!(sol.consensus_residual < 1e-6);
        for z in sol.xi.entries() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entrywise_phase_projection() {
        // xi - mu = [1 + j, -2] projects to [exp(j pi/4), -1].
        let v = CVec::from_column_slice(&[Complex64::new(1.0, 1.0), Complex64::new(-2.0, 0.0)]);
        let p = crate::channel::PhaseShifts::project(&v);
        assert!((p.entries()[0] - Complex64::cis(std::f64::consts::FRAC_PI_4)).norm() < 1e-12);
        assert!((p.entries()[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn unconstrained_matches_exhaustive_oracle() {
        for seed in 0..8u64 {
            let problem = synthetic_problem(seed, 3, 0, 0.0);
            let xi0 = PhaseShifts::identity(3);
            let sol = solve_phase_shifts(&problem, &xi0, &PhaseParams::default()).unwrap();
            let u_sol = CVec::from_iterator(3, sol.xi.entries().iter().map(|z| z.conj()));
            let got = problem.objective(&u_sol);
            let (_, oracle) = exhaustive_phase_oracle(&problem, 16);
            let scale = oracle.abs().max(1.0);
            assert!(
                got >= oracle - 1e-4 * scale,
                "seed {seed}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn constrained_solution_is_feasible() {
        for seed in 20..26u64 {
            let problem = synthetic_problem(seed, 3, 1, 0.5);
            let xi0 = PhaseShifts::identity(3);
            let sol = solve_phase_shifts(&problem, &xi0, &PhaseParams::default()).unwrap();
            let u_sol = CVec::from_iterator(3, sol.xi.entries().iter().map(|z| z.conj()));
            let slack = problem.constraint(&u_sol, 0) - problem.rhs[0];
            assert!(slack >= -1e-5, "seed {seed}: slack {slack}");
        }
    }

    #[test]
    fn infeasible_constraint_reported() {
        // Full-rank constraint quadratic: the constraint value is bounded
        // above, so a huge target is genuinely unreachable.
        let mut problem = synthetic_problem(7, 3, 1, 0.0);
        problem.b_quad[0] = CMat::identity(3, 3);
        problem.rhs[0] = 1e9;
        let xi0 = PhaseShifts::identity(3);
        match solve_phase_shifts(&problem, &xi0, &PhaseParams::default()) {
            Err(IsacError::Infeasible(_)) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}
