//! Shipped scenario geometries.
//!
//! The reference scene: ISAC transmitter at the origin, sensing receiver 40 m
//! along x, IRS near the user side at (30, 30, 0) m. The user cluster center
//! sits 10 m from the IRS toward negative y; the K users stand on a 2 m
//! circle around it. The target sits 15 m from the IRS toward the receiver
//! side. Carrier 28 GHz, reference gain -30 dB at 1 m, path-loss exponent
//! 2.2, noise -90 dBm.

use isac_core::scene::{Position3D, SceneConfig};

/// Carrier wavelength at 28 GHz, meters.
pub const WAVELENGTH_28GHZ: f64 = 299_792_458.0 / 28.0e9;

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn user_ring(center: (f64, f64), count: usize, radius: f64) -> Vec<Position3D> {
    (0..count)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / count as f64;
            Position3D::new(
                center.0 + radius * angle.cos(),
                center.1 + radius * angle.sin(),
                0.0,
            )
        })
        .collect()
}

fn clutter_ring(irs: (f64, f64), count: usize, radius: f64) -> Vec<Position3D> {
    (0..count)
        .map(|c| {
            // Fixed bearings on the side away from the user cluster.
            let angle = 0.4 + std::f64::consts::TAU * c as f64 / (count.max(1) as f64 * 2.0);
            Position3D::new(
                irs.0 + radius * angle.cos(),
                irs.1 + radius * angle.sin(),
                0.0,
            )
        })
        .collect()
}

fn base_scene(n_b: usize, n_s: usize, n_i: usize, k: usize, c: usize, l: usize) -> SceneConfig {
    let lam = WAVELENGTH_28GHZ;
    let irs = (30.0, 30.0);
    // Target 15 m from the IRS toward the receiver side.
    let t_dir = (1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt());
    SceneConfig {
        transmitter_pos: Position3D::new(0.0, 0.0, 0.0),
        receiver_pos: Position3D::new(40.0, 0.0, 0.0),
        irs_pos: Position3D::new(irs.0, irs.1, 0.0),
        user_pos: user_ring((30.0, 20.0), k, 2.0),
        target_pos: Position3D::new(irs.0 + 15.0 * t_dir.0, irs.1 + 15.0 * t_dir.1, 0.0),
        clutter_pos: clutter_ring(irs, c, 12.0),
        n_b,
        n_s,
        n_i,
        l_bi: l,
        l_iu: l,
        wavelength: lam,
        region_half_width: 8.0 * lam,
        min_spacing: lam / 2.0,
        power: dbm_to_watts(15.0),
        noise_power: dbm_to_watts(-90.0),
        pathloss_ref: db_to_linear(-30.0),
        pathloss_exp: 2.2,
        target_power_override: None,
    }
}

/// Full-scale reference scene: N_B = N_S = 16, N_I = 4x4, K = 3, C = 4,
/// four paths per communication link.
pub fn full_scale_scene() -> SceneConfig {
    base_scene(16, 16, 16, 3, 4, 4)
}

/// Desk-scale scene for solver studies: N_B = N_S = 8, N_I = 4, K = 2,
/// C = 2, two paths per communication link. The transmit power sits 15 dB
/// above the full-scale scene: the smaller arrays give up roughly that much
/// combined beamforming gain, and the ratio-maximization blocks converge
/// slowly when the operating SCNR drops far below one.
pub fn desk_scene() -> SceneConfig {
    let mut cfg = base_scene(8, 8, 4, 2, 2, 2);
    cfg.power = dbm_to_watts(30.0);
    cfg
}

/// Single-user line-of-sight scene (one user, direct-path clutter only).
pub fn single_user_scene(n_i: usize) -> SceneConfig {
    let mut cfg = base_scene(8, 8, n_i, 1, 0, 1);
    cfg.power = dbm_to_watts(15.0);
    cfg
}
