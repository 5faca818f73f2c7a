//! Comparison baselines: fixed-spacing element layouts, the single-user
//! fixed-layout evaluation, and a sequential per-element position search.

use serde::{Deserialize, Serialize};

use crate::channel::{steering_ula, ChannelDraws, ElementLayout, PhaseShifts};
use crate::error::IsacError;
use crate::metrics::{self, BeamformingSet};
use crate::scene::SceneConfig;
use crate::solver_multi::{FpAuxiliaries, MppgdParams, PositionObjective};
use crate::solver_single::{mrc_combiner, mrt_beam_single, phase_align, zf_combiner, SingleUserScenario};
use crate::{CMat, CVec};

/// Uniform grid at half-wavelength pitch centered in the movable region.
///
/// The grid shape is the most-square factorization of `n_i`; errors when the
/// grid does not fit inside the region.
pub fn fixed_layout_baseline(
    n_i: usize,
    wavelength: f64,
    region_half_width: f64,
) -> Result<ElementLayout, IsacError> {
    let mut rows = (n_i as f64).sqrt().floor() as usize;
    while rows > 1 && n_i % rows != 0 {
        rows -= 1;
    }
    let cols = n_i / rows;
    let pitch = wavelength / 2.0;
    let x_mid = (cols as f64 - 1.0) / 2.0;
    let y_mid = (rows as f64 - 1.0) / 2.0;
    let mut positions = Vec::with_capacity(n_i);
    for i in 0..cols {
        for j in 0..rows {
            positions.push(((i as f64 - x_mid) * pitch, (j as f64 - y_mid) * pitch));
        }
    }
    let layout = ElementLayout::new(positions);
    if !layout.in_region(region_half_width) {
        return Err(IsacError::Configuration(format!(
            "{cols}x{rows} grid at half-wavelength pitch exceeds the region half-width {region_half_width}"
        )));
    }
    Ok(layout)
}

/// Uniform 1-D line of `n_i` elements at the given spacing, centered.
pub fn fixed_line_layout(n_i: usize, spacing: f64) -> ElementLayout {
    let mid = (n_i as f64 - 1.0) / 2.0;
    ElementLayout::new((0..n_i).map(|m| ((m as f64 - mid) * spacing, 0.0)).collect())
}

/// Metrics the fixed layout achieves in the single-user scenario with the
/// communication phase alignment and each combiner choice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedSingleUserReport {
    pub sinr: f64,
    pub scnr_mrc: f64,
    pub scnr_zf: f64,
}

impl FixedSingleUserReport {
    pub fn scnr_best(&self) -> f64 {
        self.scnr_mrc.max(self.scnr_zf)
    }
}

/// Evaluates the single-user scenario on a frozen layout with the
/// communication-coherent phase alignment: the communication bound is met by
/// construction, the sensing side takes whatever the geometry gives.
pub fn fixed_layout_single_user(
    scenario: &SingleUserScenario,
    layout: &ElementLayout,
) -> Result<FixedSingleUserReport, IsacError> {
    let cfg = &scenario.config;
    let a_b = steering_ula(
        &cfg.tx_antenna_positions(),
        scenario.angles.tx_axis[0],
        cfg.wavelength,
    );
    let (w_c, w_s) = mrt_beam_single(&a_b, cfg.power);
    let xi = phase_align(
        layout,
        scenario.angles.iu[0][0],
        scenario.angles.bi[0],
        cfg.wavelength,
    );
    let rx = cfg.rx_antenna_positions();
    let a_s_target = steering_ula(&rx, scenario.angles.target.receiver, cfg.wavelength);
    let a_s_direct = steering_ula(&rx, scenario.angles.clutter[0].receiver, cfg.wavelength);
    let realization = scenario.realization(layout)?;
    let mut w = CMat::zeros(cfg.n_b, 2);
    w.set_column(0, &w_c);
    w.set_column(1, &w_s);

    let eval = |r_co: CVec| -> Result<(f64, f64), IsacError> {
        let beams = BeamformingSet::new(w.clone(), xi.clone(), r_co, cfg.power)?;
        Ok((
            metrics::sinr_multi(cfg, &realization, &beams, 0),
            metrics::scnr_multi(cfg, &realization, &beams),
        ))
    };
    let (sinr, scnr_mrc) = eval(mrc_combiner(&a_s_target))?;
    let scnr_zf = match zf_combiner(&a_s_target, &a_s_direct) {
        Ok(r) => eval(r)?.1,
        Err(IsacError::ZeroProjection) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(FixedSingleUserReport {
        sinr,
        scnr_mrc,
        scnr_zf,
    })
}

/// Sequential per-element position search: the memoryless
/// one-element-at-a-time comparison arm over the same penalized objective.
#[allow(clippy::too_many_arguments)]
pub fn sequential_position_baseline(
    config: &SceneConfig,
    draws: &ChannelDraws,
    layout0: &ElementLayout,
    xi: &PhaseShifts,
    r_co: &CVec,
    w: &CMat,
    aux: &FpAuxiliaries,
    thresholds: &[f64],
    params: &MppgdParams,
) -> ElementLayout {
    let objective = PositionObjective::new(
        config,
        draws,
        xi,
        r_co,
        w,
        aux,
        thresholds,
        params.rho_spacing,
        params.rho_comm,
    );
    crate::solver_multi::sequential_positions(
        &objective,
        layout0,
        config.region_half_width,
        params,
    )
    .layout
}
