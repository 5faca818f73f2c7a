//! Fractional-programming auxiliaries and the quadratic surrogate functions
//! shared by the block subproblems.
//!
//! The ratio objectives are rewritten with auxiliary variables so that each
//! block subproblem is a convex quadratic; the surrogate touches the true
//! ratio from below and is tight right after the auxiliary update.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, PhaseShifts};
use crate::metrics::{response_row, BeamformingSet};
use crate::scene::SceneConfig;
use crate::{CMat, CVec};

/// Auxiliary variables of the quadratic transform: one complex vector for
/// the sensing ratio (length K+1) and one scalar per user SINR.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpAuxiliaries {
    pub x_fp: CVec,
    pub y: Vec<Complex64>,
}

/// Precomputed linear maps of the current channels, phase shifts, and
/// combiner: everything the subproblems need before the beams enter.
#[derive(Debug, Clone)]
pub struct QuadContext {
    /// Target return row `r_co^H M_T Theta H_BI`, length N_B.
    pub row_t: CVec,
    /// Coherent clutter return row, length N_B.
    pub row_cl: CVec,
    /// Per-user effective rows `h_k^H Theta H_BI`.
    pub e_rows: Vec<CVec>,
    pub noise: f64,
}

impl QuadContext {
    pub fn build(
        config: &SceneConfig,
        realization: &ChannelRealization,
        xi: &PhaseShifts,
        r_co: &CVec,
    ) -> Self {
        let m_t = realization.target_matrix(config);
        let m_cl = realization.clutter_matrix(config);
        Self {
            row_t: response_row(&m_t, realization, xi, r_co),
            row_cl: response_row(&m_cl, realization, xi, r_co),
            e_rows: (0..realization.num_users())
                .map(|k| realization.effective_row(k, xi))
                .collect(),
            noise: config.noise_power,
        }
    }

    fn apply(row: &CVec, w: &CMat) -> CVec {
        w.transpose() * row
    }

    /// Target-return and clutter-return powers under `w`.
    pub fn sensing_powers(&self, w: &CMat) -> (f64, f64) {
        (
            Self::apply(&self.row_t, w).norm_squared(),
            Self::apply(&self.row_cl, w).norm_squared(),
        )
    }

    /// True SCNR at the current point.
    pub fn scnr(&self, w: &CMat) -> f64 {
        let (num, clutter) = self.sensing_powers(w);
        num / (clutter + self.noise)
    }

    /// Desired / total received powers of user `k` per beam.
    pub fn user_powers(&self, w: &CMat, k: usize) -> Vec<f64> {
        Self::apply(&self.e_rows[k], w)
            .iter()
            .map(|z| z.norm_sqr())
            .collect()
    }

    /// True SINR of user `k`.
    pub fn sinr(&self, w: &CMat, k: usize) -> f64 {
        let p = self.user_powers(w, k);
        let total: f64 = p.iter().sum();
        p[k] / (total - p[k] + self.noise)
    }

    /// Closed-form auxiliary update at the current beams (the stationary
    /// point of the surrogate in the auxiliaries).
    pub fn update_auxiliaries(&self, w: &CMat) -> FpAuxiliaries {
        let t = Self::apply(&self.row_t, w); // (K+1) vector of target returns
        let (_, clutter) = self.sensing_powers(w);
        let x_fp = t.map(|z| z.conj() / (clutter + self.noise));
        let y = (0..self.e_rows.len())
            .map(|k| {
                let v = Self::apply(&self.e_rows[k], w);
                let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                let desired = v[k];
                desired / (total - desired.norm_sqr() + self.noise)
            })
            .collect();
        FpAuxiliaries { x_fp, y }
    }

    /// Sensing surrogate `2 Re{row_t W x} - ||x||^2 (clutter + noise)`.
    pub fn surrogate_sensing(&self, w: &CMat, aux: &FpAuxiliaries) -> f64 {
        let t = Self::apply(&self.row_t, w);
        let lin: Complex64 = t.iter().zip(aux.x_fp.iter()).map(|(a, x)| a * x).sum();
        let (_, clutter) = self.sensing_powers(w);
        2.0 * lin.re - aux.x_fp.norm_squared() * (clutter + self.noise)
    }

    /// Per-user SINR surrogate
    /// `2 Re{y* s_k} - |y|^2 (interference + noise)`.
    pub fn surrogate_comm(&self, w: &CMat, aux: &FpAuxiliaries, k: usize) -> f64 {
        let v = Self::apply(&self.e_rows[k], w);
        let y = aux.y[k];
        let desired = v[k];
        let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let interference = total - desired.norm_sqr();
        2.0 * (y.conj() * desired).re - y.norm_sqr() * (interference + self.noise)
    }
}

/// Convenience wrapper running the auxiliary update from a beamforming set.
pub fn update_auxiliaries(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
) -> FpAuxiliaries {
    QuadContext::build(config, realization, &beams.xi, &beams.r_co).update_auxiliaries(&beams.w)
}
