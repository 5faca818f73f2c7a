//! Memory-penalized projected gradient ascent over the element positions.
//!
//! The objective is the sensing surrogate plus weighted penalties: a spacing
//! penalty summed over every violating pair, and a hinge on each user's
//! surrogate-SINR constraint. The gradient is assembled analytically from
//! the phase derivatives of every position-dependent steering and
//! field-response term; additive channel-estimate errors are constant in the
//! positions and drop out of the gradient.
//!
//! Step control keeps a memory of the last feasible improving layout: the
//! step shrinks geometrically each iteration, and when a memory-window of
//! iterations passes without a feasible improvement the iterate reverts to
//! the stored layout with a strongly reduced step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDraws, ElementLayout, PhaseShifts};
use crate::scene::SceneConfig;
use crate::{CMat, CVec};

use super::surrogate::FpAuxiliaries;

const TAU: f64 = std::f64::consts::TAU;

/// Step-control and penalty parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MppgdParams {
    /// Initial gradient step, meters.
    pub step_init: f64,
    /// Per-iteration step shrink factor (0, 1).
    pub eta1: f64,
    /// Step shrink applied on reversion (0, 1).
    pub eta2: f64,
    /// Iterations allowed without a feasible improvement before reverting.
    pub memory_window: usize,
    /// Total iteration budget.
    pub i_max: usize,
    /// Convergence threshold on the accepted objective improvement.
    pub eps: f64,
    /// Spacing-violation penalty weight.
    pub rho_spacing: f64,
    /// SINR-constraint penalty weight.
    pub rho_comm: f64,
}

/// One evaluation of the penalized objective.
#[derive(Debug, Clone)]
pub struct PositionEvaluation {
    /// Penalized objective Q.
    pub q: f64,
    /// Sensing surrogate value.
    pub gamma_s1: f64,
    /// Per-user surrogate-constraint slack (negative = violated).
    pub constraint_slack: Vec<f64>,
    /// Total spacing violation.
    pub spacing_violation: f64,
    /// Gradient with respect to each element's (x, y).
    pub gradient: Vec<(f64, f64)>,
}

impl PositionEvaluation {
    pub fn feasible(&self) -> bool {
        self.spacing_violation <= 0.0 && self.constraint_slack.iter().all(|&s| s >= -1e-9)
    }
}

/// Outcome of one position-optimization run.
#[derive(Debug, Clone)]
pub struct MppgdOutcome {
    pub layout: ElementLayout,
    pub feasible: bool,
    /// Final penalized objective at the returned layout.
    pub q: f64,
    /// Constraint slacks at the returned layout.
    pub constraint_slack: Vec<f64>,
    pub spacing_violation: f64,
    pub iterations: usize,
    /// Step size at the last feasible improvement; callers carry it across
    /// outer iterations so position refinements taper off.
    pub final_step: f64,
}

/// Position-dependent objective with all beams, phases, combiner, and
/// auxiliaries frozen.
pub struct PositionObjective<'a> {
    cfg: &'a SceneConfig,
    /// Spacing violations are measured in carrier wavelengths so the stated
    /// penalty weights balance the phase-scale objective gradients.
    inv_wavelength: f64,
    draws: &'a ChannelDraws,
    xi: Vec<Complex64>,
    w: &'a CMat,
    x_norm_sqr: f64,
    y: Vec<Complex64>,
    thresholds: &'a [f64],
    rho_spacing: f64,
    rho_comm: f64,
    k_wave: f64,
    /// Tx-side projections of each beam column per BI path.
    g_hat: Vec<Vec<Complex64>>,
    /// Tx-side projections of `W x` per BI path.
    g_hat_tilde: Vec<Complex64>,
    /// Combined receive-side scalar per scatterer (target first).
    scatter_coeff: Vec<Complex64>,
    /// Scatterer departure angles (target first).
    scatter_angles: Vec<crate::scene::VirtualAngles>,
    /// Constant error-row terms, when estimate errors are present.
    err_h_w: Option<Vec<Vec<Complex64>>>,
    err_h_wt: Option<Vec<Complex64>>,
    err_t_row: Option<Vec<Complex64>>,
    err_cl_row: Option<Vec<Complex64>>,
    err_iu: Option<Vec<Vec<Complex64>>>,
}

impl<'a> PositionObjective<'a> {
    pub fn new(
        cfg: &'a SceneConfig,
        draws: &'a ChannelDraws,
        xi: &PhaseShifts,
        r_co: &CVec,
        w: &'a CMat,
        aux: &FpAuxiliaries,
        thresholds: &'a [f64],
        rho_spacing: f64,
        rho_comm: f64,
    ) -> Self {
        let k_wave = TAU / cfg.wavelength;
        let n_cols = w.ncols();
        let tx = cfg.tx_antenna_positions();
        let l_bi = draws.bi.num_paths();
        // Per-path transmit steering projected onto each beam column.
        let mut g_hat = vec![vec![Complex64::new(0.0, 0.0); n_cols]; l_bi];
        for (l, row) in g_hat.iter_mut().enumerate() {
            let axis = draws.angles.tx_axis[l];
            for (col, slot) in row.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..cfg.n_b {
                    acc += Complex64::cis(k_wave * tx[n] * axis) * w[(n, col)];
                }
                *slot = acc;
            }
        }
        let g_hat_tilde: Vec<Complex64> = (0..l_bi)
            .map(|l| {
                (0..n_cols)
                    .map(|col| g_hat[l][col] * aux.x_fp[col])
                    .sum()
            })
            .collect();

        // Receive-side scalars r_co^H a_S^*(angle) times the return gain.
        let rx = cfg.rx_antenna_positions();
        let rx_scalar = |angle: f64| -> Complex64 {
            rx.iter()
                .zip(r_co.iter())
                .map(|(&yp, r)| r.conj() * Complex64::cis(-k_wave * yp * angle))
                .sum()
        };
        let mut scatter_coeff = vec![draws.target_gain * rx_scalar(draws.angles.target.receiver)];
        let mut scatter_angles = vec![draws.angles.target.irs];
        for (c, path) in draws.angles.clutter.iter().enumerate() {
            scatter_coeff.push(draws.clutter_gains[c] * rx_scalar(path.receiver));
            scatter_angles.push(path.irs);
        }

        // Constant error projections.
        let (mut err_h_w, mut err_h_wt, mut err_t_row, mut err_cl_row, mut err_iu) =
            (None, None, None, None, None);
        if let Some(err) = &draws.csi_error {
            let n_i = cfg.n_i;
            let mut hw = vec![vec![Complex64::new(0.0, 0.0); n_cols]; n_i];
            let mut hwt = vec![Complex64::new(0.0, 0.0); n_i];
            for m in 0..n_i {
                for col in 0..n_cols {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in 0..cfg.n_b {
                        acc += err.h_bi[(m, n)] * w[(n, col)];
                    }
                    hw[m][col] = acc;
                    hwt[m] += acc * aux.x_fp[col];
                }
            }
            err_h_w = Some(hw);
            err_h_wt = Some(hwt);
            let row_of = |mat: &CMat| -> Vec<Complex64> {
                (0..n_i)
                    .map(|m| {
                        (0..cfg.n_s)
                            .map(|s| r_co[s].conj() * mat[(s, m)])
                            .sum()
                    })
                    .collect()
            };
            err_t_row = Some(row_of(&err.target));
            err_cl_row = Some(row_of(&err.clutter));
            err_iu = Some(err.h_iu.iter().map(|v| v.iter().cloned().collect()).collect());
        }

        Self {
            cfg,
            inv_wavelength: 1.0 / cfg.wavelength,
            draws,
            xi: xi.entries().to_vec(),
            w,
            x_norm_sqr: aux.x_fp.norm_squared(),
            y: aux.y.clone(),
            thresholds,
            rho_spacing,
            rho_comm,
            k_wave,
            g_hat,
            g_hat_tilde,
            scatter_coeff,
            scatter_angles,
            err_h_w,
            err_h_wt,
            err_t_row,
            err_cl_row,
            err_iu,
        }
    }

    /// Evaluates the penalized objective and its position gradient.
    pub fn evaluate(&self, layout: &ElementLayout) -> PositionEvaluation {
        let n_i = self.cfg.n_i;
        let n_cols = self.w.ncols();
        let k_users = self.cfg.num_users();
        let kw = self.k_wave;
        let zero = Complex64::new(0.0, 0.0);

        // Per-element scalars and their (x, y) derivatives.
        // psi[m][col] = H[m,:] w_col, phi[m] = H[m,:] (W x),
        // tau[m] = (r^H M_T)[m], kap[m] = (r^H M_Cl)[m],
        // hbar[k][m] = conj(h_k[m]).
        let mut psi = vec![vec![zero; n_cols]; n_i];
        let mut dpsi_x = vec![vec![zero; n_cols]; n_i];
        let mut dpsi_y = vec![vec![zero; n_cols]; n_i];
        let mut phi = vec![zero; n_i];
        let mut dphi_x = vec![zero; n_i];
        let mut dphi_y = vec![zero; n_i];
        let mut tau = vec![zero; n_i];
        let mut dtau_x = vec![zero; n_i];
        let mut dtau_y = vec![zero; n_i];
        let mut kap = vec![zero; n_i];
        let mut dkap_x = vec![zero; n_i];
        let mut dkap_y = vec![zero; n_i];
        let mut hbar = vec![vec![zero; n_i]; k_users];
        let mut dhbar_x = vec![vec![zero; n_i]; k_users];
        let mut dhbar_y = vec![vec![zero; n_i]; k_users];

        for (m, &(x, y)) in layout.positions.iter().enumerate() {
            for (l, &gain) in self.draws.bi.gains.iter().enumerate() {
                let va = self.draws.angles.bi[l];
                let e = Complex64::cis(-kw * (x * va.theta + y * va.omega)) * gain;
                let jx = Complex64::new(0.0, -kw * va.theta);
                let jy = Complex64::new(0.0, -kw * va.omega);
                for col in 0..n_cols {
                    let term = e * self.g_hat[l][col];
                    psi[m][col] += term;
                    dpsi_x[m][col] += jx * term;
                    dpsi_y[m][col] += jy * term;
                }
                let term = e * self.g_hat_tilde[l];
                phi[m] += term;
                dphi_x[m] += jx * term;
                dphi_y[m] += jy * term;
            }
            if let (Some(hw), Some(hwt)) = (&self.err_h_w, &self.err_h_wt) {
                for col in 0..n_cols {
                    psi[m][col] += hw[m][col];
                }
                phi[m] += hwt[m];
            }
            for (s, &coeff) in self.scatter_coeff.iter().enumerate() {
                let va = self.scatter_angles[s];
                let e = Complex64::cis(kw * (x * va.theta + y * va.omega)) * coeff;
                let jx = Complex64::new(0.0, kw * va.theta);
                let jy = Complex64::new(0.0, kw * va.omega);
                if s == 0 {
                    tau[m] += e;
                    dtau_x[m] += jx * e;
                    dtau_y[m] += jy * e;
                } else {
                    kap[m] += e;
                    dkap_x[m] += jx * e;
                    dkap_y[m] += jy * e;
                }
            }
            if let Some(t) = &self.err_t_row {
                tau[m] += t[m];
            }
            if let Some(c) = &self.err_cl_row {
                kap[m] += c[m];
            }
            for k in 0..k_users {
                for (l, &gain) in self.draws.iu[k].gains.iter().enumerate() {
                    let va = self.draws.angles.iu[k][l];
                    // conj(h_k[m]) = sum_l alpha_l exp(+j k rho_l^IU).
                    let e = Complex64::cis(kw * (x * va.theta + y * va.omega)) * gain;
                    let jx = Complex64::new(0.0, kw * va.theta);
                    let jy = Complex64::new(0.0, kw * va.omega);
                    hbar[k][m] += e;
                    dhbar_x[k][m] += jx * e;
                    dhbar_y[k][m] += jy * e;
                }
                if let Some(err) = &self.err_iu {
                    hbar[k][m] += err[k][m].conj();
                }
            }
        }

        // Sensing surrogate value and gradient.
        let t_total: Complex64 = (0..n_i).map(|m| tau[m] * self.xi[m] * phi[m]).sum();
        let mut c_cols = vec![zero; n_cols];
        for col in 0..n_cols {
            c_cols[col] = (0..n_i).map(|m| kap[m] * self.xi[m] * psi[m][col]).sum();
        }
        let clutter_power: f64 = c_cols.iter().map(|z| z.norm_sqr()).sum();
        let gamma_s1 =
            2.0 * t_total.re - self.x_norm_sqr * (clutter_power + self.cfg.noise_power);

        let mut grad: Vec<(f64, f64)> = vec![(0.0, 0.0); n_i];
        for m in 0..n_i {
            let dt_x = (dtau_x[m] * phi[m] + tau[m] * dphi_x[m]) * self.xi[m];
            let dt_y = (dtau_y[m] * phi[m] + tau[m] * dphi_y[m]) * self.xi[m];
            let mut dc_x = 0.0;
            let mut dc_y = 0.0;
            for col in 0..n_cols {
                let d_x = (dkap_x[m] * psi[m][col] + kap[m] * dpsi_x[m][col]) * self.xi[m];
                let d_y = (dkap_y[m] * psi[m][col] + kap[m] * dpsi_y[m][col]) * self.xi[m];
                dc_x += 2.0 * (c_cols[col].conj() * d_x).re;
                dc_y += 2.0 * (c_cols[col].conj() * d_y).re;
            }
            grad[m].0 = 2.0 * dt_x.re - self.x_norm_sqr * dc_x;
            grad[m].1 = 2.0 * dt_y.re - self.x_norm_sqr * dc_y;
        }

        // Per-user surrogate constraints and their gradients.
        let mut constraint_slack = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let y_k = self.y[k];
            let y2 = y_k.norm_sqr();
            let mut s = vec![zero; n_cols];
            for col in 0..n_cols {
                s[col] = (0..n_i).map(|m| hbar[k][m] * self.xi[m] * psi[m][col]).sum();
            }
            let interference: f64 = (0..n_cols)
                .filter(|&col| col != k)
                .map(|col| s[col].norm_sqr())
                .sum();
            let f_k = 2.0 * (y_k.conj() * s[k]).re
                - y2 * (interference + self.cfg.noise_power)
                - self.thresholds[k];
            constraint_slack.push(f_k);
            if f_k < 0.0 {
                // Hinge active: accumulate rho_c * grad(F_k).
                for m in 0..n_i {
                    let ds = |col: usize, dh: &Complex64, dps: &Complex64| -> Complex64 {
                        (dh * self.xi[m] * psi[m][col]) + (hbar[k][m] * self.xi[m] * dps)
                    };
                    let ds_kx = ds(k, &dhbar_x[k][m], &dpsi_x[m][k]);
                    let ds_ky = ds(k, &dhbar_y[k][m], &dpsi_y[m][k]);
                    let mut df_x = 2.0 * (y_k.conj() * ds_kx).re;
                    let mut df_y = 2.0 * (y_k.conj() * ds_ky).re;
                    for col in 0..n_cols {
                        if col == k {
                            continue;
                        }
                        let dsx = ds(col, &dhbar_x[k][m], &dpsi_x[m][col]);
                        let dsy = ds(col, &dhbar_y[k][m], &dpsi_y[m][col]);
                        df_x -= y2 * 2.0 * (s[col].conj() * dsx).re;
                        df_y -= y2 * 2.0 * (s[col].conj() * dsy).re;
                    }
                    grad[m].0 += self.rho_comm * df_x;
                    grad[m].1 += self.rho_comm * df_y;
                }
            }
        }

        // Spacing penalty over every violating pair, in wavelength units;
        // the subgradient pushes the pair apart.
        let d_min = self.cfg.min_spacing;
        let mut spacing_violation = 0.0;
        for i in 0..n_i {
            for j in (i + 1)..n_i {
                let (xi_, yi_) = layout.positions[i];
                let (xj_, yj_) = layout.positions[j];
                let dist = ((xi_ - xj_).powi(2) + (yi_ - yj_).powi(2)).sqrt();
                if dist < d_min {
                    spacing_violation += (d_min - dist) * self.inv_wavelength;
                    if dist > 1e-12 {
                        let ux = (xi_ - xj_) / dist * self.inv_wavelength;
                        let uy = (yi_ - yj_) / dist * self.inv_wavelength;
                        grad[i].0 += self.rho_spacing * ux;
                        grad[i].1 += self.rho_spacing * uy;
                        grad[j].0 -= self.rho_spacing * ux;
                        grad[j].1 -= self.rho_spacing * uy;
                    }
                }
            }
        }

        let hinge: f64 = constraint_slack.iter().map(|&s| s.min(0.0)).sum();
        let q = gamma_s1 - self.rho_spacing * spacing_violation + self.rho_comm * hinge;
        PositionEvaluation {
            q,
            gamma_s1,
            constraint_slack,
            spacing_violation,
            gradient: grad,
        }
    }
}

/// Runs the memory-penalized projected gradient ascent from `layout0`.
#[allow(clippy::too_many_arguments)]
pub fn mppgd_positions(
    objective: &PositionObjective<'_>,
    layout0: &ElementLayout,
    region_half_width: f64,
    params: &MppgdParams,
) -> MppgdOutcome {
    let project = |l: &ElementLayout| l.clamped(region_half_width);
    let mut current = project(layout0);
    let mut eval = objective.evaluate(&current);
    let mut step = params.step_init;
    let mut best: Option<(ElementLayout, f64, f64)> = if eval.feasible() {
        Some((current.clone(), step, eval.q))
    } else {
        None
    };
    let mut since_improve = 0usize;
    let mut iterations = 0usize;

    while iterations < params.i_max {
        iterations += 1;
        // Unit-normalized ascent direction: the step parameter is then a
        // physical displacement, matching its wavelength-scaled default.
        let grad_norm = eval
            .gradient
            .iter()
            .map(|&(gx, gy)| gx * gx + gy * gy)
            .sum::<f64>()
            .sqrt();
        if grad_norm < 1e-300 {
            break;
        }
        let scale = step / grad_norm;
        let stepped = ElementLayout::new(
            current
                .positions
                .iter()
                .zip(eval.gradient.iter())
                .map(|(&(x, y), &(gx, gy))| (x + scale * gx, y + scale * gy))
                .collect(),
        );
        let candidate = project(&stepped);
        step *= params.eta1;
        let cand_eval = objective.evaluate(&candidate);

        let improved = match &best {
            Some((_, _, q_best)) => cand_eval.feasible() && cand_eval.q > *q_best,
            None => cand_eval.feasible(),
        };
        if improved {
            let gain = best.as_ref().map(|(_, _, q)| cand_eval.q - q);
            best = Some((candidate.clone(), step, cand_eval.q));
            since_improve = 0;
            current = candidate;
            eval = cand_eval;
            if let Some(g) = gain {
                if g < params.eps {
                    break;
                }
            }
        } else {
            since_improve += 1;
            current = candidate;
            eval = cand_eval;
            if since_improve > params.memory_window {
                match &best {
                    Some((layout, step_fes, _)) => {
                        current = layout.clone();
                        step = params.eta2 * step_fes;
                        eval = objective.evaluate(&current);
                    }
                    None => {
                        current = project(layout0);
                        step *= params.eta2;
                        eval = objective.evaluate(&current);
                    }
                }
                since_improve = 0;
            }
        }
        if step < 1e-16 {
            break;
        }
    }

    match best {
        Some((layout, step_fes, q)) => {
            let final_eval = objective.evaluate(&layout);
            MppgdOutcome {
                layout,
                feasible: true,
                q,
                constraint_slack: final_eval.constraint_slack,
                spacing_violation: final_eval.spacing_violation,
                iterations,
                final_step: step_fes,
            }
        }
        None => MppgdOutcome {
            layout: current,
            feasible: false,
            q: eval.q,
            constraint_slack: eval.constraint_slack,
            spacing_violation: eval.spacing_violation,
            iterations,
            final_step: step,
        },
    }
}

/// Sequential per-element variant: each pass sweeps the elements one at a
/// time with a memoryless shrinking step, accepting only feasible
/// improvements. Comparison baseline for the joint update.
pub fn sequential_positions(
    objective: &PositionObjective<'_>,
    layout0: &ElementLayout,
    region_half_width: f64,
    params: &MppgdParams,
) -> MppgdOutcome {
    let half = region_half_width;
    let mut layout = layout0.clamped(half);
    let base = objective.evaluate(&layout);
    let mut best_q = base.q;
    let mut feasible_seen = base.feasible();
    let mut iterations = 0usize;
    let n = layout.len().max(1);
    let mut last_step = params.step_init;
    for _pass in 0..3 {
        for m in 0..layout.len() {
            let mut step = params.step_init;
            for _ in 0..params.i_max / n {
                iterations += 1;
                let eval = objective.evaluate(&layout);
                let (gx, gy) = eval.gradient[m];
                let norm = (gx * gx + gy * gy).sqrt();
                if norm < 1e-300 {
                    break;
                }
                let mut candidate = layout.clone();
                candidate.positions[m].0 =
                    (candidate.positions[m].0 + step * gx / norm).clamp(-half, half);
                candidate.positions[m].1 =
                    (candidate.positions[m].1 + step * gy / norm).clamp(-half, half);
                let cand_eval = objective.evaluate(&candidate);
                if cand_eval.feasible() && cand_eval.q > best_q {
                    best_q = cand_eval.q;
                    layout = candidate;
                    feasible_seen = true;
                    last_step = step;
                } else {
                    step *= params.eta2;
                    if step < 1e-14 {
                        break;
                    }
                }
            }
        }
    }
    let final_eval = objective.evaluate(&layout);
    MppgdOutcome {
        feasible: feasible_seen && final_eval.feasible(),
        q: final_eval.q,
        constraint_slack: final_eval.constraint_slack,
        spacing_violation: final_eval.spacing_violation,
        iterations,
        final_step: last_step,
        layout,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelAngles;
    use crate::metrics::BeamformingSet;
    use crate::scene::Position3D;
    use crate::solver_multi::surrogate::QuadContext;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene() -> SceneConfig {
        SceneConfig {
            transmitter_pos: Position3D::new(0.0, 0.0, 0.0),
            receiver_pos: Position3D::new(40.0, 0.0, 0.0),
            irs_pos: Position3D::new(30.0, 30.0, 0.0),
            user_pos: vec![
                Position3D::new(30.0, 20.0, 0.0),
                Position3D::new(28.5, 21.0, 0.0),
            ],
            target_pos: Position3D::new(40.6, 19.4, 0.0),
            clutter_pos: vec![Position3D::new(22.0, 25.0, 0.0)],
            n_b: 4,
            n_s: 4,
            n_i: 4,
            l_bi: 2,
            l_iu: 2,
            wavelength: 0.0107,
            region_half_width: 8.0 * 0.0107,
            min_spacing: 0.0107 / 2.0,
            power: 0.05,
            noise_power: 1e-12,
            pathloss_ref: 1e-3,
            pathloss_exp: 2.2,
            target_power_override: None,
        }
    }

    struct Setup {
        cfg: SceneConfig,
        draws: ChannelDraws,
        layout: ElementLayout,
        beams: BeamformingSet,
        aux: FpAuxiliaries,
        thresholds: Vec<f64>,
    }

    fn setup(seed: u64, with_csi_error: bool) -> Setup {
        let cfg = scene();
        let angles = ChannelAngles::from_scene(&cfg, seed).unwrap();
        let mut draws = ChannelDraws::sample(&cfg, &angles, seed).unwrap();
        if with_csi_error {
            draws = draws.perturb_csi(&cfg, 1e-9, seed.wrapping_add(5));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let half = cfg.region_half_width;
        let layout = ElementLayout::new(
            (0..cfg.n_i)
                .map(|_| {
                    (
                        rng.gen_range(-0.8 * half..0.8 * half),
                        rng.gen_range(-0.8 * half..0.8 * half),
                    )
                })
                .collect(),
        );
        let real = draws.assemble(&cfg, &layout).unwrap();
        let mut w = CMat::from_fn(cfg.n_b, 3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let tp: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        w.scale_mut((cfg.power / tp).sqrt());
        let phases: Vec<f64> = (0..cfg.n_i).map(|_| rng.gen_range(0.0..TAU)).collect();
        let mut r = CVec::from_fn(cfg.n_s, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let nrm = r.norm();
        r.unscale_mut(nrm);
        let beams =
            BeamformingSet::new(w, PhaseShifts::from_phases(&phases), r, cfg.power).unwrap();
        let ctx = QuadContext::build(&cfg, &real, &beams.xi, &beams.r_co);
        let aux = ctx.update_auxiliaries(&beams.w);
        Setup {
            thresholds: vec![0.0, 0.0],
            cfg,
            draws,
            layout,
            beams,
            aux,
        }
    }

    #[test]
    fn value_matches_assembled_surrogate() {
        // Dual route: the position objective evaluated directly must agree
        // with the surrogate computed on freshly assembled channels.
        for &with_err in &[false, true] {
            let s = setup(21, with_err);
            let obj = PositionObjective::new(
                &s.cfg, &s.draws, &s.beams.xi, &s.beams.r_co, &s.beams.w, &s.aux,
                &s.thresholds, 100.0, 10.0,
            );
            let eval = obj.evaluate(&s.layout);
            let real = s.draws.assemble(&s.cfg, &s.layout).unwrap();
            let ctx = QuadContext::build(&s.cfg, &real, &s.beams.xi, &s.beams.r_co);
            let expect = ctx.surrogate_sensing(&s.beams.w, &s.aux);
            assert!(
                (eval.gamma_s1 - expect).abs() <= 1e-9 * expect.abs().max(1e-12),
                "gamma_s1 {} vs {}",
                eval.gamma_s1,
                expect
            );
            for k in 0..2 {
                let f_expect = ctx.surrogate_comm(&s.beams.w, &s.aux, k) - s.thresholds[k];
                assert!(
                    (eval.constraint_slack[k] - f_expect).abs()
                        <= 1e-9 * f_expect.abs().max(1e-12),
                    "F_{k}: {} vs {}",
                    eval.constraint_slack[k],
                    f_expect
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = setup(33, false);
        // Thresholds above the current surrogate force the hinge active so
        // its gradient is exercised too.
        let mut thresholds = s.thresholds.clone();
        let obj0 = PositionObjective::new(
            &s.cfg, &s.draws, &s.beams.xi, &s.beams.r_co, &s.beams.w, &s.aux,
            &thresholds, 100.0, 10.0,
        );
        let base = obj0.evaluate(&s.layout);
        thresholds = base
            .constraint_slack
            .iter()
            .map(|&f| f + 1.0) // shift so F - tau < 0
            .collect();
        let obj = PositionObjective::new(
            &s.cfg, &s.draws, &s.beams.xi, &s.beams.r_co, &s.beams.w, &s.aux,
            &thresholds, 100.0, 10.0,
        );
        let eval = obj.evaluate(&s.layout);
        let h = 1e-6 * s.cfg.wavelength;
        let mut max_rel: f64 = 0.0;
        for m in 0..s.cfg.n_i {
            for axis in 0..2 {
                let mut plus = s.layout.clone();
                let mut minus = s.layout.clone();
                if axis == 0 {
                    plus.positions[m].0 += h;
                    minus.positions[m].0 -= h;
                } else {
                    plus.positions[m].1 += h;
                    minus.positions[m].1 -= h;
                }
                let fd = (obj.evaluate(&plus).q - obj.evaluate(&minus).q) / (2.0 * h);
                let an = if axis == 0 {
                    eval.gradient[m].0
                } else {
                    eval.gradient[m].1
                };
                let scale = an.abs().max(fd.abs()).max(1e-9);
                max_rel = max_rel.max((fd - an).abs() / scale);
            }
        }
        assert!(max_rel < 1e-5, "max relative gradient error {max_rel}");
    }

    #[test]
    fn projection_clamps_and_zero_step_is_identity() {
        let s = setup(44, false);
        let obj = PositionObjective::new(
            &s.cfg, &s.draws, &s.beams.xi, &s.beams.r_co, &s.beams.w, &s.aux,
            &s.thresholds, 100.0, 10.0,
        );
        // Clamping: a coordinate at 9 lambda with half-width 8 lambda
        // projects to 8 lambda.
        let mut wild = s.layout.clone();
        wild.positions[0].0 = 9.0 * s.cfg.wavelength;
        let clamped = wild.clamped(s.cfg.region_half_width);
        assert!((clamped.positions[0].0 - s.cfg.region_half_width).abs() < 1e-15);

        // Zero-step run leaves the layout and objective unchanged.
        let params = MppgdParams {
            step_init: 0.0,
            eta1: 0.9,
            eta2: 0.1,
            memory_window: 3,
            i_max: 5,
            eps: 1e-9,
            rho_spacing: 100.0,
            rho_comm: 10.0,
        };
        let out = mppgd_positions(&obj, &s.layout, s.cfg.region_half_width, &params);
        let base = obj.evaluate(&s.layout);
        assert!((out.q - base.q).abs() <= 1e-12 * base.q.abs().max(1.0));
        for (a, b) in out.layout.positions.iter().zip(s.layout.positions.iter()) {
            assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-15);
        }
    }

    #[test]
    fn ascent_improves_objective() {
        let s = setup(55, false);
        let obj = PositionObjective::new(
            &s.cfg, &s.draws, &s.beams.xi, &s.beams.r_co, &s.beams.w, &s.aux,
            &s.thresholds, 100.0, 10.0,
        );
        let base = obj.evaluate(&s.layout);
        let params = MppgdParams {
            step_init: 0.05 * s.cfg.wavelength,
            eta1: 0.9,
            eta2: 0.1,
            memory_window: 10,
            i_max: 100,
            eps: 1e-9,
            rho_spacing: 100.0,
            rho_comm: 10.0,
        };
        let out = mppgd_positions(&obj, &s.layout, s.cfg.region_half_width, &params);
        assert!(out.feasible);
        assert!(out.q >= base.q - 1e-12, "no regression: {} vs {}", out.q, base.q);
        assert!(out.layout.in_region(s.cfg.region_half_width));
    }
}
