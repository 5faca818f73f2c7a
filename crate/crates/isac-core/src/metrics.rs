//! Instantaneous and statistical performance measures: per-user SINR and
//! rate, sensing SCNR, single-user upper bounds, coverage probability, and
//! IRS beampattern maps.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, PhaseShifts};
use crate::error::IsacError;
use crate::scene::SceneConfig;
use crate::{CMat, CVec};

/// Transmit beamforming matrix, IRS phase shifts, and sensing combiner.
///
/// Columns `0..K` of `w` are the per-user communication beams, column `K` is
/// the sensing beam.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformingSet {
    pub w: CMat,
    pub xi: PhaseShifts,
    pub r_co: CVec,
}

impl BeamformingSet {
    /// Validates the power budget `tr(W W^H) <= P` (relative tolerance 1e-9)
    /// and the unit combiner norm (tolerance 1e-9).
    pub fn new(w: CMat, xi: PhaseShifts, r_co: CVec, power_budget: f64) -> Result<Self, IsacError> {
        let tp = w.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if tp > power_budget * (1.0 + 1e-9) {
            return Err(IsacError::Configuration(format!(
                "beamforming power {tp:.6e} exceeds budget {power_budget:.6e}"
            )));
        }
        if (r_co.norm() - 1.0).abs() > 1e-9 {
            return Err(IsacError::Configuration(format!(
                "combiner norm {} != 1",
                r_co.norm()
            )));
        }
        Ok(Self { w, xi, r_co })
    }

    pub fn num_users(&self) -> usize {
        self.w.ncols() - 1
    }

    pub fn w_comm(&self, k: usize) -> CVec {
        self.w.column(k).into_owned()
    }

    pub fn w_sens(&self) -> CVec {
        self.w.column(self.w.ncols() - 1).into_owned()
    }

    pub fn trace_power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Per-realization metric summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    /// Linear per-user SINR.
    pub sinr: Vec<f64>,
    /// Per-user rate, bits/s/Hz.
    pub rate: Vec<f64>,
    /// Linear SCNR.
    pub scnr: f64,
    /// Sensing metric `log10(SCNR)`.
    pub scnr_log10: f64,
}

/// `log2(1 + sinr)`.
pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

/// Per-user received SINR: desired power over inter-user plus sensing
/// interference plus noise.
pub fn sinr_multi(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
    k: usize,
) -> f64 {
    let row = realization.effective_row(k, &beams.xi);
    let n_beams = beams.w.ncols();
    let mut desired = 0.0;
    let mut interference = 0.0;
    for j in 0..n_beams {
        let val: Complex64 = row
            .iter()
            .zip(beams.w.column(j).iter())
            .map(|(a, b)| a * b)
            .sum();
        let p = val.norm_sqr();
        if j == k {
            desired = p;
        } else {
            interference += p;
        }
    }
    desired / (interference + config.noise_power)
}

/// Target-return power and coherent clutter-return power of the sensing
/// receiver: the two SCNR components before noise is added.
pub fn scnr_components(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
) -> (f64, f64) {
    let m_t = realization.target_matrix(config);
    let m_c = realization.clutter_matrix(config);
    let num = return_row_norm_sqr(&m_t, realization, beams);
    let clutter = return_row_norm_sqr(&m_c, realization, beams);
    (num, clutter)
}

/// Receive-combined reflected row `r_co^H M Theta H_BI` of a sensing
/// response matrix, as a length-N_B vector.
pub fn response_row(
    response: &CMat,
    realization: &ChannelRealization,
    xi: &PhaseShifts,
    r_co: &CVec,
) -> CVec {
    let n_i = response.ncols();
    let mut row = CVec::zeros(n_i);
    for m in 0..n_i {
        let mut acc = Complex64::new(0.0, 0.0);
        for s in 0..response.nrows() {
            acc += r_co[s].conj() * response[(s, m)];
        }
        row[m] = acc * xi.entries()[m];
    }
    realization.h_bi.transpose() * row
}

fn return_row_norm_sqr(
    response: &CMat,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
) -> f64 {
    let through = response_row(response, realization, &beams.xi, &beams.r_co);
    let out = beams.w.transpose() * through; // (K+1) x 1
    out.norm_squared()
}

/// Sensing SCNR per the coherent-clutter model: the clutter returns sum
/// inside a single squared norm.
pub fn scnr_multi(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
) -> f64 {
    let (num, clutter) = scnr_components(config, realization, beams);
    num / (clutter + config.noise_power)
}

/// Evaluates all metrics of one realization under one beamforming set.
pub fn evaluate(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
) -> MetricReport {
    let sinr: Vec<f64> = (0..realization.num_users())
        .map(|k| sinr_multi(config, realization, beams, k))
        .collect();
    let rate_v = sinr.iter().map(|&s| rate(s)).collect();
    let scnr = scnr_multi(config, realization, beams);
    MetricReport {
        rate: rate_v,
        sinr,
        scnr,
        scnr_log10: scnr.log10(),
    }
}

/// Single-user upper bounds on SCNR and SINR for the line-of-sight scenario.
///
/// `target_cascade_power` is `|alpha_IS,T * alpha_BI|^2` and
/// `comm_cascade_power` is `|alpha_BI * alpha_IU|^2`.
pub fn upper_bounds_single(
    config: &SceneConfig,
    target_cascade_power: f64,
    comm_cascade_power: f64,
) -> (f64, f64) {
    let n_i2 = (config.n_i * config.n_i) as f64;
    let scnr_upp = config.power * (config.n_b * config.n_s) as f64 * target_cascade_power * n_i2
        / config.noise_power;
    let sinr_upp =
        config.power * config.n_b as f64 * comm_cascade_power * n_i2 / config.noise_power;
    (scnr_upp, sinr_upp)
}

/// Empirical fraction of SCNR samples at or above the threshold.
pub fn coverage_probability(scnr_samples: &[f64], threshold: f64) -> Result<f64, IsacError> {
    if scnr_samples.is_empty() {
        return Err(IsacError::InvalidInput("empty SCNR sample list".into()));
    }
    let hits = scnr_samples.iter().filter(|&&s| s >= threshold).count();
    Ok(hits as f64 / scnr_samples.len() as f64)
}

/// One beampattern sample: gain of the reflected beam toward `(theta, omega)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeampatternPoint {
    pub theta: f64,
    pub omega: f64,
    pub gain: f64,
}

/// Beampattern gain `|| a_I^T(theta, omega) Theta H_BI W ||^2` over a grid of
/// virtual-angle pairs. Grid points must satisfy `theta^2 + omega^2 <= 1`.
pub fn beampattern_map(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
    grid: &[(f64, f64)],
) -> Result<Vec<BeampatternPoint>, IsacError> {
    let mut out = Vec::with_capacity(grid.len());
    for &(theta, omega) in grid {
        if theta * theta + omega * omega > 1.0 + 1e-12 {
            return Err(IsacError::InvalidInput(format!(
                "grid point ({theta}, {omega}) outside the unit disc"
            )));
        }
        out.push(BeampatternPoint {
            theta,
            omega,
            gain: beampattern_gain(config, realization, beams, theta, omega),
        });
    }
    Ok(out)
}

/// Gain toward a single virtual-angle pair.
pub fn beampattern_gain(
    config: &SceneConfig,
    realization: &ChannelRealization,
    beams: &BeamformingSet,
    theta: f64,
    omega: f64,
) -> f64 {
    let a = realization.irs_steering(
        crate::scene::VirtualAngles::new(theta, omega),
        config.wavelength,
    );
    let n_i = a.len();
    let mut row = CVec::zeros(n_i);
    for m in 0..n_i {
        row[m] = a[m] * beams.xi.entries()[m];
    }
    let through = realization.h_bi.transpose() * &row;
    let out = beams.w.transpose() * through;
    out.norm_squared()
}

/// Square grid over the unit virtual-angle disc with `steps` points per axis.
pub fn unit_disc_grid(steps: usize) -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for i in 0..steps {
        for j in 0..steps {
            let theta = -1.0 + 2.0 * i as f64 / (steps - 1) as f64;
            let omega = -1.0 + 2.0 * j as f64 / (steps - 1) as f64;
            if theta * theta + omega * omega <= 1.0 {
                grid.push((theta, omega));
            }
        }
    }
    grid
}
