//! Angular-information beamforming and element-position design for the
//! single-user line-of-sight scenario.
//!
//! The design has three parts: a matched transmit beam toward the IRS, a
//! phase/position system that simultaneously (i) aligns the reflected user
//! beam coherently, (ii) aligns the reflected target beam coherently, and
//! (iii) spreads the direct-path return over the roots of unity so it
//! cancels, and a matched receive combiner. Positions come from a 2x2 linear
//! system in the virtual-angle differences with integer wrap variables; the
//! integer loop restarts with fresh random offsets until the region and
//! spacing constraints hold.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    steering_ula, ChannelAngles, ChannelDraws, ChannelRealization, ElementLayout, PathResponse,
    PhaseShifts,
};
use crate::error::IsacError;
use crate::metrics::{self, BeamformingSet};
use crate::scene::{SceneConfig, VirtualAngles};
use crate::CVec;

const TAU: f64 = std::f64::consts::TAU;

/// A single-user, single-path scene: fixed angles and deterministic gains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleUserScenario {
    pub config: SceneConfig,
    /// Single-path angle tables; `clutter` holds only the direct path.
    pub angles: ChannelAngles,
    pub alpha_bi: Complex64,
    pub alpha_iu: Complex64,
    pub alpha_target: Complex64,
    pub alpha_direct: Complex64,
}

impl SingleUserScenario {
    /// Builds the scenario from a scene with K = 1, no physical clutters,
    /// and single-path links; gain magnitudes follow the distance law with
    /// seeded random phases.
    pub fn from_config(config: &SceneConfig, seed: u64) -> Result<Self, IsacError> {
        if config.num_users() != 1 || config.l_bi != 1 || config.l_iu != 1 {
            return Err(IsacError::Configuration(
                "single-user scenario requires K = 1 and single-path links".into(),
            ));
        }
        if config.num_clutters() != 0 {
            return Err(IsacError::Configuration(
                "single-user scenario keeps only the direct-path clutter".into(),
            ));
        }
        let angles = ChannelAngles::from_scene(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::channel::derive_seed(seed, 0x51f0));
        let mut phased = |power: f64| -> Complex64 {
            Complex64::from_polar(power.sqrt(), rng.gen_range(0.0..TAU))
        };
        Ok(Self {
            config: config.clone(),
            alpha_bi: phased(config.link_power_bi()?),
            alpha_iu: phased(config.link_power_iu(0)?),
            alpha_target: phased(config.target_power()?),
            alpha_direct: phased(config.clutter_power()?),
            angles,
        })
    }

    /// Assembles the deterministic channels at a layout.
    pub fn realization(&self, layout: &ElementLayout) -> Result<ChannelRealization, IsacError> {
        let draws = ChannelDraws {
            angles: self.angles.clone(),
            bi: PathResponse {
                gains: vec![self.alpha_bi],
                link_power: self.alpha_bi.norm_sqr(),
            },
            iu: vec![PathResponse {
                gains: vec![self.alpha_iu],
                link_power: self.alpha_iu.norm_sqr(),
            }],
            target_gain: self.alpha_target,
            clutter_gains: vec![self.alpha_direct],
            csi_error: None,
        };
        draws.assemble(&self.config, layout)
    }

    /// Upper bounds (sensing, communication) for this scenario's gains.
    pub fn upper_bounds(&self) -> (f64, f64) {
        metrics::upper_bounds_single(
            &self.config,
            (self.alpha_target * self.alpha_bi).norm_sqr(),
            (self.alpha_bi * self.alpha_iu).norm_sqr(),
        )
    }
}

/// Matched single-user transmit beams: `w_c` is the scaled conjugate
/// transmit steering vector carrying the full budget, `w_s` is zero.
pub fn mrt_beam_single(tx_steering: &CVec, power: f64) -> (CVec, CVec) {
    let norm = tx_steering.norm();
    let w_c = tx_steering.map(|z| z.conj() * (power.sqrt() / norm));
    let w_s = CVec::zeros(tx_steering.len());
    (w_c, w_s)
}

/// Phase alignment that makes the reflected user beam coherent:
/// `theta_m = 2 pi / lambda (rho^BI(r_m) - rho^IU(r_m))`.
pub fn phase_align(
    layout: &ElementLayout,
    iu: VirtualAngles,
    bi: VirtualAngles,
    wavelength: f64,
) -> PhaseShifts {
    let k = TAU / wavelength;
    let phases: Vec<f64> = layout
        .positions
        .iter()
        .map(|&(x, y)| k * ((x * bi.theta + y * bi.omega) - (x * iu.theta + y * iu.omega)))
        .collect();
    PhaseShifts::from_phases(&phases)
}

/// The 2x2 position system: angle-difference matrix, integer wrap matrix,
/// circulant offsets, and the free phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PprSystem {
    /// Rows: (target - direct) and (user - direct) virtual-angle
    /// differences, scaled by `2 pi / lambda`.
    pub b: Matrix2<f64>,
    pub theta0: f64,
    /// Circulant offset index; element m targets phase
    /// `2 pi ((m + shift) mod N_I) / N_I` on the direct-path equation.
    pub shift: usize,
    /// Integer wrap variables, one column per element.
    pub k_int: Vec<[i64; 2]>,
}

/// Builds the angle-difference matrix and checks invertibility.
pub fn build_ppr_matrix(
    target: VirtualAngles,
    direct: VirtualAngles,
    user: VirtualAngles,
    wavelength: f64,
) -> Result<Matrix2<f64>, IsacError> {
    let k = TAU / wavelength;
    let b = Matrix2::new(
        k * (target.theta - direct.theta),
        k * (target.omega - direct.omega),
        k * (user.theta - direct.theta),
        k * (user.omega - direct.omega),
    );
    let det = b.determinant().abs();
    if det < 1e-12 {
        return Err(IsacError::DegenerateAngles { det_abs: det });
    }
    Ok(b)
}

/// Result of the position search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PprSolution {
    pub layout: ElementLayout,
    pub phases: PhaseShifts,
    pub system: PprSystem,
    /// Largest wrapped residual over the three phase-position equations.
    pub residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

struct PprAngles {
    target: VirtualAngles,
    direct: VirtualAngles,
    user: VirtualAngles,
    bi: VirtualAngles,
}

fn wrap_pi(x: f64) -> f64 {
    x - TAU * (x / TAU).round()
}

fn rho(va: VirtualAngles, pos: (f64, f64)) -> f64 {
    pos.0 * va.theta + pos.1 * va.omega
}

/// Solves the phase-position system: draws a free phase and circulant offset
/// per restart, solves the 2x2 linear system per element, and walks the
/// integer wrap variables until every element lies in the region; restarts
/// until the pairwise-spacing constraint also holds.
///
/// Each restart seeds the integer matrix toward a random in-region point per
/// element: the admissible positions form a 2-D lattice generated by the
/// columns of `2 pi B^{-1}`, and a zero-seeded integer matrix with
/// whole-vector updates could only ever reach one line of that lattice.
///
/// `per_coordinate_updates` switches the region walk from the whole-vector
/// integer update to adjusting only the violating axis (documented variant).
#[allow(clippy::too_many_arguments)]
pub fn solve_ppr_positions(
    target: VirtualAngles,
    direct: VirtualAngles,
    user: VirtualAngles,
    bi: VirtualAngles,
    wavelength: f64,
    n_i: usize,
    region_half_width: f64,
    min_spacing: f64,
    t1_max: usize,
    t2_max: usize,
    seed: u64,
    per_coordinate_updates: bool,
) -> Result<PprSolution, IsacError> {
    let b = build_ppr_matrix(target, direct, user, wavelength)?;
    let b_inv = b.try_inverse().expect("determinant already checked");
    let angles = PprAngles { target, direct, user, bi };
    let u_max = region_half_width;
    let u_min = -region_half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::channel::derive_seed(seed, 0x9921));

    let mut best: Option<(f64, PprSolution)> = None;
    for t1 in 1..=t1_max {
        let theta0: f64 = rng.gen_range(0.0..TAU);
        let shift: usize = rng.gen_range(0..n_i);
        let offsets: Vec<f64> = (0..n_i).map(|m| ((m + shift) % n_i) as f64 / n_i as f64).collect();
        // Admissible positions of element m form the lattice
        // `c_m + (2 pi B^{-1}) Z^2`. Snap random in-region targets to lattice
        // points through a Gauss-reduced basis (plain coordinate rounding
        // picks far-away points when the basis is skewed), rejecting
        // candidates closer than the minimum spacing to placed elements.
        let lattice = b_inv * TAU;
        let (reduced, unimodular) = gauss_reduce(&lattice);
        let reduced_inv = reduced.try_inverse().expect("lattice basis is invertible");
        let mut k_int: Vec<[i64; 2]> = Vec::with_capacity(n_i);
        let mut placed: Vec<(f64, f64)> = Vec::with_capacity(n_i);
        for m in 0..n_i {
            let c_m = b_inv * nalgebra::Vector2::new(1.0, 1.0) * (theta0 - TAU * offsets[m]);
            let mut chosen = [0i64; 2];
            for attempt in 0..40 {
                let target_pos = nalgebra::Vector2::new(
                    rng.gen_range(-region_half_width..region_half_width),
                    rng.gen_range(-region_half_width..region_half_width),
                );
                let n_red = reduced_inv * (target_pos - c_m);
                let n0 = n_red.x.round() as i64;
                let n1 = n_red.y.round() as i64;
                let cand = [
                    unimodular[0][0] * n0 + unimodular[0][1] * n1,
                    unimodular[1][0] * n0 + unimodular[1][1] * n1,
                ];
                let r = c_m + lattice * nalgebra::Vector2::new(cand[0] as f64, cand[1] as f64);
                let in_region = r.x.abs() <= region_half_width && r.y.abs() <= region_half_width;
                let spaced = placed
                    .iter()
                    .all(|&(px, py)| ((r.x - px).powi(2) + (r.y - py).powi(2)).sqrt() >= min_spacing);
                chosen = cand;
                if (in_region && spaced) || attempt == 39 {
                    if in_region && spaced {
                        placed.push((r.x, r.y));
                    }
                    break;
                }
            }
            k_int.push(chosen);
        }

        let positions_for = |k_int: &[[i64; 2]]| -> Vec<(f64, f64)> {
            (0..n_i)
                .map(|m| {
                    let rhs0 = theta0 + TAU * (k_int[m][0] as f64 - offsets[m]);
                    let rhs1 = theta0 + TAU * (k_int[m][1] as f64 - offsets[m]);
                    let r = b_inv * nalgebra::Vector2::new(rhs0, rhs1);
                    (r.x, r.y)
                })
                .collect()
        };

        let mut layout = ElementLayout::new(positions_for(&k_int));
        let mut t2 = 0;
        while t2 < t2_max && !layout.in_region(region_half_width) {
            for (m, &(x, y)) in layout.positions.iter().enumerate() {
                if per_coordinate_updates {
                    // Adjust only the axis that violates the region. The
                    // integer rows couple to positions through B, so the
                    // violating-axis choice follows the sign pattern of the
                    // corresponding inverse column.
                    for axis in 0..2 {
                        let coord = if axis == 0 { x } else { y };
                        if coord > u_max {
                            let col = if b_inv[(axis, 0)].abs() >= b_inv[(axis, 1)].abs() { 0 } else { 1 };
                            k_int[m][col] -= b_inv[(axis, col)].signum() as i64;
                        } else if coord < u_min {
                            let col = if b_inv[(axis, 0)].abs() >= b_inv[(axis, 1)].abs() { 0 } else { 1 };
                            k_int[m][col] += b_inv[(axis, col)].signum() as i64;
                        }
                    }
                } else if x.max(y) > u_max {
                    k_int[m][0] -= 1;
                    k_int[m][1] -= 1;
                } else if x.min(y) < u_min {
                    k_int[m][0] += 1;
                    k_int[m][1] += 1;
                }
            }
            layout = ElementLayout::new(positions_for(&k_int));
            t2 += 1;
        }

        let system = PprSystem {
            b,
            theta0,
            shift,
            k_int: k_int.clone(),
        };
        let candidate = finish_solution(&angles, wavelength, layout, system, &offsets, t1, t2);
        let in_region = candidate.layout.in_region(region_half_width);
        let spacing_ok = candidate.layout.spacing_feasible(min_spacing);
        if in_region && spacing_ok {
            return Ok(candidate);
        }
        // Track the least-infeasible candidate for the failure report.
        let violation = region_violation(&candidate.layout, region_half_width)
            + spacing_violation(&candidate.layout, min_spacing);
        if best.as_ref().map_or(true, |(v, _)| violation < *v) {
            best = Some((violation, candidate));
        }
    }
    let (_, best) = best.expect("at least one restart ran");
    Err(IsacError::PositionSearchExhausted {
        outer_iterations: t1_max,
        best_residual: best.residual,
    })
}

/// Gauss (Lagrange) reduction of a 2-D lattice basis; returns the reduced
/// basis `R` and the integer unimodular `U` with `R = L U`.
fn gauss_reduce(l: &Matrix2<f64>) -> (Matrix2<f64>, [[i64; 2]; 2]) {
    let mut v1 = l.column(0).into_owned();
    let mut v2 = l.column(1).into_owned();
    let mut u = [[1i64, 0i64], [0i64, 1i64]];
    for _ in 0..64 {
        if v1.norm_squared() > v2.norm_squared() {
            std::mem::swap(&mut v1, &mut v2);
            let tmp = [u[0][0], u[1][0]];
            u[0][0] = u[0][1];
            u[1][0] = u[1][1];
            u[0][1] = tmp[0];
            u[1][1] = tmp[1];
        }
        let mu = (v1.dot(&v2) / v1.norm_squared()).round();
        if mu == 0.0 {
            break;
        }
        v2 -= v1 * mu;
        u[0][1] -= mu as i64 * u[0][0];
        u[1][1] -= mu as i64 * u[1][0];
    }
    (Matrix2::from_columns(&[v1, v2]), u)
}

fn finish_solution(
    angles: &PprAngles,
    wavelength: f64,
    layout: ElementLayout,
    system: PprSystem,
    offsets: &[f64],
    outer: usize,
    inner: usize,
) -> PprSolution {
    let k = TAU / wavelength;
    // Phases from the direct-path equation, literally:
    // theta_m = 2 pi offset_m - 2 pi / lambda (rho_0(r_m) - rho_BI(r_m)).
    let phases: Vec<f64> = layout
        .positions
        .iter()
        .zip(offsets.iter())
        .map(|(&pos, &a)| TAU * a - k * (rho(angles.direct, pos) - rho(angles.bi, pos)))
        .collect();
    let mut residual: f64 = 0.0;
    for (m, (&pos, &theta_m)) in layout.positions.iter().zip(phases.iter()).enumerate() {
        let lhs1 = k * (rho(angles.target, pos) - rho(angles.bi, pos)) + theta_m;
        let lhs2 = k * (rho(angles.user, pos) - rho(angles.bi, pos)) + theta_m;
        let lhs3 = k * (rho(angles.direct, pos) - rho(angles.bi, pos)) + theta_m;
        residual = residual
            .max(wrap_pi(lhs1 - system.theta0).abs())
            .max(wrap_pi(lhs2 - system.theta0).abs())
            .max(wrap_pi(lhs3 - TAU * offsets[m]).abs());
    }
    PprSolution {
        phases: PhaseShifts::from_phases(&phases),
        layout,
        system,
        residual,
        outer_iterations: outer,
        inner_iterations: inner,
    }
}

fn region_violation(layout: &ElementLayout, half: f64) -> f64 {
    layout
        .positions
        .iter()
        .map(|&(x, y)| (x.abs() - half).max(0.0) + (y.abs() - half).max(0.0))
        .sum()
}

fn spacing_violation(layout: &ElementLayout, min_spacing: f64) -> f64 {
    (min_spacing - layout.min_pairwise_distance()).max(0.0)
}

/// Null-steering combiner: projects the conjugate target steering vector
/// onto the orthogonal complement of the conjugate clutter steering vector.
pub fn zf_combiner(a_target: &CVec, a_clutter: &CVec) -> Result<CVec, IsacError> {
    let n = a_target.len() as f64;
    // a_c^T a_c^* = N_S; projector I - a_c^* a_c^T / N_S applied to a_T^*.
    let cross: Complex64 = a_clutter
        .iter()
        .zip(a_target.iter())
        .map(|(c, t)| c * t.conj())
        .sum();
    let mut r = CVec::from_iterator(
        a_target.len(),
        a_target
            .iter()
            .zip(a_clutter.iter())
            .map(|(t, c)| t.conj() - c.conj() * (cross / n)),
    );
    let norm = r.norm();
    if norm < 1e-9 * n.sqrt() {
        return Err(IsacError::ZeroProjection);
    }
    r.unscale_mut(norm);
    Ok(r)
}

/// Matched combiner toward the target return direction.
pub fn mrc_combiner(a_target: &CVec) -> CVec {
    let norm = a_target.norm();
    a_target.map(|z| z.conj() / norm)
}

/// Search budget of the position solver.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingleUserParams {
    pub t1_max: usize,
    pub t2_max: usize,
    pub seed: u64,
    /// Adjust only the violating axis in the region walk instead of the
    /// whole integer vector.
    pub per_coordinate_updates: bool,
}

impl Default for SingleUserParams {
    fn default() -> Self {
        Self {
            t1_max: 100,
            t2_max: 10,
            seed: 0,
            per_coordinate_updates: false,
        }
    }
}

/// Full single-user design output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleUserSolution {
    pub layout: ElementLayout,
    pub beams: BeamformingSet,
    pub ppr: PprSolution,
    pub sinr: f64,
    pub scnr: f64,
    pub sinr_upper: f64,
    pub scnr_upper: f64,
}

/// Runs the whole single-user design: matched transmit beam, position
/// search, direct-path-cancelling phases, matched combiner, and achieved
/// metric evaluation.
pub fn solve_single_user(
    scenario: &SingleUserScenario,
    params: &SingleUserParams,
) -> Result<SingleUserSolution, IsacError> {
    let cfg = &scenario.config;
    let a_b = steering_ula(
        &cfg.tx_antenna_positions(),
        scenario.angles.tx_axis[0],
        cfg.wavelength,
    );
    let (w_c, w_s) = mrt_beam_single(&a_b, cfg.power);
    let ppr = solve_ppr_positions(
        scenario.angles.target.irs,
        scenario.angles.clutter[0].irs,
        scenario.angles.iu[0][0],
        scenario.angles.bi[0],
        cfg.wavelength,
        cfg.n_i,
        cfg.region_half_width,
        cfg.min_spacing,
        params.t1_max,
        params.t2_max,
        params.seed,
        params.per_coordinate_updates,
    )?;
    let a_s_target = steering_ula(
        &cfg.rx_antenna_positions(),
        scenario.angles.target.receiver,
        cfg.wavelength,
    );
    let r_co = mrc_combiner(&a_s_target);
    let mut w = crate::CMat::zeros(cfg.n_b, 2);
    w.set_column(0, &w_c);
    w.set_column(1, &w_s);
    let beams = BeamformingSet::new(w, ppr.phases.clone(), r_co, cfg.power)?;
    let realization = scenario.realization(&ppr.layout)?;
    let sinr = metrics::sinr_multi(cfg, &realization, &beams, 0);
    let scnr = metrics::scnr_multi(cfg, &realization, &beams);
    let (scnr_upper, sinr_upper) = scenario.upper_bounds();
    Ok(SingleUserSolution {
        layout: ppr.layout.clone(),
        beams,
        ppr,
        sinr,
        scnr,
        sinr_upper,
        scnr_upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Position3D;

    pub(crate) fn single_scene(n_i: usize) -> SceneConfig {
        SceneConfig {
            transmitter_pos: Position3D::new(0.0, 0.0, 0.0),
            receiver_pos: Position3D::new(40.0, 0.0, 0.0),
            irs_pos: Position3D::new(30.0, 30.0, 0.0),
            user_pos: vec![Position3D::new(30.0, 20.0, 0.0)],
            target_pos: Position3D::new(40.6, 19.4, 0.0),
            clutter_pos: vec![],
            n_b: 8,
            n_s: 8,
            n_i,
            l_bi: 1,
            l_iu: 1,
            wavelength: 0.0107,
            region_half_width: 8.0 * 0.0107,
            min_spacing: 0.0107 / 2.0,
            power: 0.0316,
            noise_power: 1e-12,
            pathloss_ref: 1e-3,
            pathloss_exp: 2.2,
            target_power_override: None,
        }
    }

    #[test]
    fn mrt_beam_normalization_and_gain() {
        let lam = 0.0107;
        let a_b = steering_ula(&crate::scene::ula_positions(4, lam), 0.41, lam);
        let (w_c, w_s) = mrt_beam_single(&a_b, 1.0);
        assert!((w_c.norm_squared() - 1.0).abs() < 1e-12);
        assert!(w_s.norm() == 0.0);
        // Matched-filter gain a_B^T w_c = sqrt(P N_B).
        let g: Complex64 = a_b.iter().zip(w_c.iter()).map(|(a, w)| a * w).sum();
        assert!((g.norm() - 2.0).abs() < 1e-12); // sqrt(1 * 4)
        assert!(g.im.abs() < 1e-12);
    }

    #[test]
    fn phase_align_coherence() {
        let lam = 0.0107;
        let layout = ElementLayout::new(vec![
            (0.01, -0.02),
            (0.03, 0.04),
            (-0.05, 0.02),
            (0.00, 0.01),
        ]);
        let iu = VirtualAngles::new(0.3, -0.5);
        let bi = VirtualAngles::new(-0.2, 0.7);
        // Identical angles give zero phases.
        let same = phase_align(&layout, iu, iu, lam);
        for z in same.entries() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        // The aligned reflected sum is fully coherent: |sum| = N_I.
        let xi = phase_align(&layout, iu, bi, lam);
        let k = TAU / lam;
        let total: Complex64 = layout
            .positions
            .iter()
            .zip(xi.entries())
            .map(|(&pos, x)| Complex64::cis(k * (rho(iu, pos) - rho(bi, pos))) * x)
            .sum();
        assert!((total.norm() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ppr_matrix_degenerate_angles_rejected() {
        let t = VirtualAngles::new(0.5, 0.5);
        let d = VirtualAngles::new(0.1, 0.1);
        let u = VirtualAngles::new(0.3, 0.3); // collinear differences
        assert!(matches!(
            build_ppr_matrix(t, d, u, 0.0107),
            Err(IsacError::DegenerateAngles { .. })
        ));
    }

    #[test]
    fn ppr_trivial_zero_rhs() {
        // B = 2 pi I (lambda = 1, unit angle differences), theta0 = 0,
        // K = 0, offset 0 puts the first element at the origin. The solver
        // draws theta0/shift randomly, so check the linear relation directly.
        let b = build_ppr_matrix(
            VirtualAngles::new(1.0, 0.0),
            VirtualAngles::new(0.0, 0.0),
            VirtualAngles::new(0.0, 1.0),
            1.0,
        )
        .unwrap();
        let inv = b.try_inverse().unwrap();
        let r = inv * nalgebra::Vector2::new(0.0, 0.0);
        assert!(r.x.abs() < 1e-15 && r.y.abs() < 1e-15);
    }

    #[test]
    fn ppr_solution_residuals_and_bounds() {
        let cfg = single_scene(9);
        let scenario = SingleUserScenario::from_config(&cfg, 11).unwrap();
        let sol = solve_single_user(&scenario, &SingleUserParams { seed: 3, ..Default::default() })
            .unwrap();
        assert!(sol.ppr.residual < 1e-9, "residual {}", sol.ppr.residual);
        assert!(sol.layout.in_region(cfg.region_half_width));
        assert!(sol.layout.spacing_feasible(cfg.min_spacing));
        let rel_c = (sol.sinr - sol.sinr_upper).abs() / sol.sinr_upper;
        let rel_s = (sol.scnr - sol.scnr_upper).abs() / sol.scnr_upper;
        assert!(rel_c < 1e-6, "comm gap {rel_c}");
        assert!(rel_s < 1e-6, "sens gap {rel_s}");
    }

    #[test]
    fn ppr_grid_oracle_no_better_layout() {
        // Exhaustive 0.05-lambda lattice at N_I = 2: no lattice layout beats
        // the solved one on min(SINR, SCNR) relative to the bounds. The
        // angles are hand-built so the two-element system is feasible inside
        // a small region and the lattice stays tractable.
        let mut cfg = single_scene(2);
        cfg.region_half_width = 0.8 * cfg.wavelength;
        let mut scenario = SingleUserScenario::from_config(&cfg, 5).unwrap();
        scenario.angles.bi = vec![VirtualAngles::new(0.2, 0.1)];
        scenario.angles.iu = vec![vec![VirtualAngles::new(-0.5, 0.7)]];
        scenario.angles.target.irs = VirtualAngles::new(0.5, -0.3);
        scenario.angles.clutter[0].irs = VirtualAngles::new(-0.5, -0.3);
        let sol = solve_single_user(&scenario, &SingleUserParams { seed: 1, ..Default::default() })
            .unwrap();
        let solved_min = (sol.sinr / sol.sinr_upper).min(sol.scnr / sol.scnr_upper);
        assert!(solved_min > 1.0 - 1e-9, "solution should meet both bounds");

        // Scalar oracle constants.
        let k = TAU / cfg.wavelength;
        let rx = cfg.rx_antenna_positions();
        let a_s_t = steering_ula(&rx, scenario.angles.target.receiver, cfg.wavelength);
        let a_s_0 = steering_ula(&rx, scenario.angles.clutter[0].receiver, cfg.wavelength);
        let r_co = mrc_combiner(&a_s_t);
        let chi_t: Complex64 = a_s_t.iter().zip(r_co.iter()).map(|(a, r)| r.conj() * a.conj()).sum();
        let chi_0: Complex64 = a_s_0.iter().zip(r_co.iter()).map(|(a, r)| r.conj() * a.conj()).sum();
        let chi_t = chi_t.norm_sqr();
        let chi_0 = chi_0.norm_sqr();
        let p_nb = cfg.power * cfg.n_b as f64;
        let c_num = p_nb * (scenario.alpha_target * scenario.alpha_bi).norm_sqr() * chi_t;
        let c_den = p_nb * (scenario.alpha_direct * scenario.alpha_bi).norm_sqr() * chi_0;
        let c_comm = p_nb * (scenario.alpha_bi * scenario.alpha_iu).norm_sqr();
        let phase_sum = |layout: &[(f64, f64)], phases: &[f64], va: VirtualAngles| -> f64 {
            let s: Complex64 = layout
                .iter()
                .zip(phases.iter())
                .map(|(&pos, &th)| {
                    Complex64::cis(
                        k * (rho(va, pos) - rho(scenario.angles.bi[0], pos)) + th,
                    )
                })
                .sum();
            s.norm_sqr()
        };

        let step = 0.05 * cfg.wavelength;
        let half = cfg.region_half_width;
        let n_steps = (2.0 * half / step).round() as i64 + 1;
        let coords: Vec<f64> = (0..n_steps).map(|i| -half + i as f64 * step).collect();
        let mut best = 0.0f64;
        for &x1 in &coords {
            for &y1 in &coords {
                for &x2 in &coords {
                    for &y2 in &coords {
                        let layout = [(x1, y1), (x2, y2)];
                        if ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt() < cfg.min_spacing {
                            continue;
                        }
                        // Direct-path-cancelling phases at this layout.
                        let phases = [
                            -k * (rho(scenario.angles.clutter[0].irs, layout[0])
                                - rho(scenario.angles.bi[0], layout[0])),
                            std::f64::consts::PI
                                - k * (rho(scenario.angles.clutter[0].irs, layout[1])
                                    - rho(scenario.angles.bi[0], layout[1])),
                        ];
                        let s_comm = phase_sum(&layout, &phases, scenario.angles.iu[0][0]);
                        let s_t = phase_sum(&layout, &phases, scenario.angles.target.irs);
                        let s_0 = phase_sum(&layout, &phases, scenario.angles.clutter[0].irs);
                        let sinr = c_comm * s_comm / cfg.noise_power;
                        let scnr = c_num * s_t / (c_den * s_0 + cfg.noise_power);
                        best = best.max((sinr / sol.sinr_upper).min(scnr / sol.scnr_upper));
                    }
                }
            }
        }
        assert!(
            best <= solved_min + 1e-9,
            "lattice found min-ratio {best} above solved {solved_min}"
        );
    }

    #[test]
    fn zf_combiner_null_and_gain() {
        let lam = 0.0107;
        let pos = crate::scene::ula_positions(6, lam);
        let a_t = steering_ula(&pos, 0.63, lam);
        let a_c = steering_ula(&pos, -0.21, lam);
        let r = zf_combiner(&a_t, &a_c).unwrap();
        assert!((r.norm() - 1.0).abs() < 1e-12);
        let null: Complex64 = a_c.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        assert!(null.norm() < 1e-12);
        let gain: Complex64 = a_t.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        assert!(gain.norm_sqr() <= 6.0 + 1e-9);

        // Coincident angles give no usable projection.
        assert!(matches!(
            zf_combiner(&a_t, &a_t),
            Err(IsacError::ZeroProjection)
        ));

        // Orthogonal steering vectors: full array gain.
        let a_t = steering_ula(&pos, 0.0, lam);
        let a_c = steering_ula(&pos, 2.0 / 6.0, lam); // orthogonal beam
        let r = zf_combiner(&a_t, &a_c).unwrap();
        let gain: Complex64 = a_t.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        assert!((gain.norm_sqr() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn mrc_combiner_gain() {
        let lam = 0.0107;
        let pos = crate::scene::ula_positions(4, lam);
        let a_t = steering_ula(&pos, 0.4, lam);
        let r = mrc_combiner(&a_t);
        assert!((r.norm() - 1.0).abs() < 1e-12);
        let gain: Complex64 = a_t.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        assert!((gain.norm_sqr() - 4.0).abs() < 1e-9);
    }
}
