//! Scene geometry, system constants, and angle computations.
//!
//! Every other module consumes a [`SceneConfig`]: it fixes the 3-D positions
//! of the transceivers, IRS, users, target, and clutters, the array sizes,
//! the carrier wavelength, the movable-region half-width, and the power /
//! noise budget. [`geometry_to_angles`] derives the per-link propagation
//! angles from the declared Cartesian frame so that simulations are
//! reproducible without hand-entered angle values.
//!
//! Conventions:
//! - both uniform linear arrays (transmitter and sensing receiver) lie along
//!   the global y-axis with half-wavelength spacing, centered at the origin
//!   of their local frames;
//! - IRS elements move in the local x-y plane of the surface;
//! - for a link with unit direction vector `u`, the IRS-side virtual angles
//!   are the direction cosines `(u_x, u_y)` and the ULA-side scalar angle is
//!   `u_y`; link directions point away from the node whose array phase is
//!   being computed.

use serde::{Deserialize, Serialize};

use crate::error::IsacError;

/// A point in the global 3-D Cartesian frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(&self, other: &Position3D) -> (f64, f64, f64) {
        (self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = self.sub(other);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Virtual angle pair of a propagation path: the direction cosines that enter
/// the element phase `x * theta + y * omega`.
///
/// `theta = cos(elevation) * cos(azimuth)`, `omega = cos(elevation) *
/// sin(azimuth)`, so `theta^2 + omega^2 <= 1` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualAngles {
    pub theta: f64,
    pub omega: f64,
}

impl VirtualAngles {
    pub fn new(theta: f64, omega: f64) -> Self {
        Self { theta, omega }
    }
}

/// Computes the virtual angle pair from elevation and azimuth.
///
/// Total on `elevation in [0, pi]`, `azimuth in [0, 2*pi)`.
pub fn virtual_angles(elevation: f64, azimuth: f64) -> VirtualAngles {
    let ce = elevation.cos();
    VirtualAngles::new(ce * azimuth.cos(), ce * azimuth.sin())
}

/// Distance-law channel power gain `c0 * d^(-alpha)` (linear scale).
pub fn pathloss_power(distance: f64, c0: f64, alpha: f64) -> Result<f64, IsacError> {
    if !(distance > 0.0) {
        return Err(IsacError::Domain(format!(
            "pathloss distance must be positive, got {distance}"
        )));
    }
    Ok(c0 * distance.powf(-alpha))
}

/// Full scene description. Immutable after construction; safe to share
/// across concurrent Monte Carlo workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub transmitter_pos: Position3D,
    pub receiver_pos: Position3D,
    pub irs_pos: Position3D,
    /// One entry per communication user (length K >= 1).
    pub user_pos: Vec<Position3D>,
    pub target_pos: Position3D,
    /// Physical clutter positions; the direct IRS-receiver path is accounted
    /// for separately and is always present.
    pub clutter_pos: Vec<Position3D>,
    /// Transmit antennas.
    pub n_b: usize,
    /// Sensing-receiver antennas.
    pub n_s: usize,
    /// Movable reflecting elements.
    pub n_i: usize,
    /// Paths on the transmitter-IRS link.
    pub l_bi: usize,
    /// Paths on each IRS-user link.
    pub l_iu: usize,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    /// Half-width A of the movable region: coordinates range over [-A, A].
    pub region_half_width: f64,
    /// Minimum spacing D between element pairs, meters.
    pub min_spacing: f64,
    /// Transmit power budget, watts.
    pub power: f64,
    /// Noise power, watts.
    pub noise_power: f64,
    /// Channel power gain at the 1 m reference distance (linear).
    pub pathloss_ref: f64,
    /// Path-loss exponent.
    pub pathloss_exp: f64,
    /// Optional override for the target-return power; when absent the target
    /// gain draws the same per-return share `sigma_is^2 / (C + 1)` as each
    /// clutter, where `sigma_is^2` is the IRS-receiver link power.
    #[serde(default)]
    pub target_power_override: Option<f64>,
}

impl SceneConfig {
    /// Validates the structural invariants of the configuration.
    pub fn validate(&self) -> Result<(), IsacError> {
        if self.n_i < 1 || self.n_b < 1 || self.n_s < 1 {
            return Err(IsacError::Configuration(
                "antenna/element counts must be >= 1".into(),
            ));
        }
        if self.user_pos.is_empty() {
            return Err(IsacError::Configuration("at least one user required".into()));
        }
        if self.l_bi < 1 || self.l_iu < 1 {
            return Err(IsacError::Configuration("path counts must be >= 1".into()));
        }
        if !(self.min_spacing > 0.0) {
            return Err(IsacError::Configuration("min spacing must be positive".into()));
        }
        if 2.0 * self.region_half_width <= self.min_spacing {
            return Err(IsacError::Configuration(
                "region side 2A must exceed the minimum spacing D".into(),
            ));
        }
        if !(self.power > 0.0) || !(self.noise_power > 0.0) {
            return Err(IsacError::Configuration(
                "power and noise power must be positive".into(),
            ));
        }
        if !(self.wavelength > 0.0) {
            return Err(IsacError::Configuration("wavelength must be positive".into()));
        }
        for p in self
            .user_pos
            .iter()
            .chain(self.clutter_pos.iter())
            .chain([&self.transmitter_pos, &self.receiver_pos, &self.irs_pos, &self.target_pos])
        {
            if !p.is_finite() {
                return Err(IsacError::Configuration("non-finite position".into()));
            }
        }
        Ok(())
    }

    /// Number of communication users K.
    pub fn num_users(&self) -> usize {
        self.user_pos.len()
    }

    /// Number of physical clutters C (excluding the direct IRS-receiver path).
    pub fn num_clutters(&self) -> usize {
        self.clutter_pos.len()
    }

    /// Lower bound of the movable region, `u_min = -A`.
    pub fn region_min(&self) -> f64 {
        -self.region_half_width
    }

    /// Upper bound of the movable region, `u_max = A`.
    pub fn region_max(&self) -> f64 {
        self.region_half_width
    }

    /// Transmit-array antenna y-coordinates: centered half-wavelength ULA.
    pub fn tx_antenna_positions(&self) -> Vec<f64> {
        ula_positions(self.n_b, self.wavelength)
    }

    /// Sensing-receiver antenna y-coordinates: centered half-wavelength ULA.
    pub fn rx_antenna_positions(&self) -> Vec<f64> {
        ula_positions(self.n_s, self.wavelength)
    }

    /// Power of the transmitter-IRS link, `c0 * d_BI^(-alpha)`.
    pub fn link_power_bi(&self) -> Result<f64, IsacError> {
        pathloss_power(
            self.transmitter_pos.distance(&self.irs_pos),
            self.pathloss_ref,
            self.pathloss_exp,
        )
    }

    /// Power of the IRS-user link for user `k`.
    pub fn link_power_iu(&self, k: usize) -> Result<f64, IsacError> {
        pathloss_power(
            self.irs_pos.distance(&self.user_pos[k]),
            self.pathloss_ref,
            self.pathloss_exp,
        )
    }

    /// Power of the IRS-receiver sensing link.
    pub fn link_power_is(&self) -> Result<f64, IsacError> {
        pathloss_power(
            self.irs_pos.distance(&self.receiver_pos),
            self.pathloss_ref,
            self.pathloss_exp,
        )
    }

    /// Per-return power of each clutter (including the direct path):
    /// `sigma_is^2 / (C + 1)`.
    pub fn clutter_power(&self) -> Result<f64, IsacError> {
        Ok(self.link_power_is()? / (self.num_clutters() as f64 + 1.0))
    }

    /// Power of the target return; defaults to the per-clutter share.
    pub fn target_power(&self) -> Result<f64, IsacError> {
        match self.target_power_override {
            Some(p) => Ok(p),
            None => self.clutter_power(),
        }
    }

    /// Loads a configuration from its TOML representation.
    pub fn from_toml_str(text: &str) -> Result<Self, IsacError> {
        let cfg: SceneConfig = toml::from_str(text)
            .map_err(|e| IsacError::Configuration(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes the configuration to TOML.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }
}

/// Centered half-wavelength ULA coordinates along the array axis.
pub fn ula_positions(n: usize, wavelength: f64) -> Vec<f64> {
    let pitch = wavelength / 2.0;
    let mid = (n as f64 - 1.0) / 2.0;
    (0..n).map(|m| (m as f64 - mid) * pitch).collect()
}

/// Elevation/azimuth of one link, radians.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElevationAzimuth {
    pub elevation: f64,
    pub azimuth: f64,
}

impl ElevationAzimuth {
    pub fn virtual_angles(&self) -> VirtualAngles {
        virtual_angles(self.elevation, self.azimuth)
    }
}

/// Angles of one sensing return path: how the IRS sees the scatterer and how
/// the receiver array sees the echo.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensingPathAngles {
    /// Departure virtual angles at the IRS toward the scatterer (or toward
    /// the receiver for the direct path).
    pub irs: VirtualAngles,
    /// Scalar ULA virtual angle of the echo arriving at the sensing receiver.
    pub receiver: f64,
}

/// Deterministic per-link angle table computed from scene geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleTable {
    /// Scalar ULA virtual angle of the transmitter-IRS departure.
    pub tx_axis: f64,
    /// Elevation/azimuth of the transmitter-IRS link seen from the IRS.
    pub bi_link: ElevationAzimuth,
    /// Arrival virtual angles at the IRS from the transmitter.
    pub bi: VirtualAngles,
    /// Elevation/azimuth of each IRS-user link.
    pub iu_links: Vec<ElevationAzimuth>,
    /// Departure virtual angles at the IRS toward each user.
    pub iu: Vec<VirtualAngles>,
    /// Target return angles.
    pub target: SensingPathAngles,
    /// Clutter return angles; index 0 is the direct IRS-receiver path,
    /// indices 1.. are the physical clutters.
    pub clutter: Vec<SensingPathAngles>,
}

fn link_direction(from: &Position3D, to: &Position3D, label: &str) -> Result<(f64, f64, f64), IsacError> {
    let (dx, dy, dz) = to.sub(from);
    let r = (dx * dx + dy * dy + dz * dz).sqrt();
    if r <= f64::EPSILON {
        return Err(IsacError::DegenerateGeometry(format!(
            "coincident endpoints on link {label}"
        )));
    }
    Ok((dx / r, dy / r, dz / r))
}

fn elevation_azimuth(u: (f64, f64, f64)) -> ElevationAzimuth {
    let (x, y, z) = u;
    let elevation = z.abs().clamp(0.0, 1.0).asin();
    let mut azimuth = y.atan2(x);
    if azimuth < 0.0 {
        azimuth += 2.0 * std::f64::consts::PI;
    }
    ElevationAzimuth { elevation, azimuth }
}

/// Derives every link angle required by the channel model from the scene
/// geometry. Deterministic; errors on coincident endpoints.
pub fn geometry_to_angles(config: &SceneConfig) -> Result<AngleTable, IsacError> {
    config.validate()?;
    let irs = &config.irs_pos;

    // Transmitter-IRS link: departure cosine along the transmit ULA axis and
    // arrival angles at the IRS.
    let u_tx_to_irs = link_direction(&config.transmitter_pos, irs, "transmitter->IRS")?;
    let tx_axis = u_tx_to_irs.1;
    let u_irs_to_tx = link_direction(irs, &config.transmitter_pos, "IRS->transmitter")?;
    let bi_link = elevation_azimuth(u_irs_to_tx);

    let mut iu_links = Vec::with_capacity(config.num_users());
    for (k, user) in config.user_pos.iter().enumerate() {
        let u = link_direction(irs, user, &format!("IRS->user{k}"))?;
        iu_links.push(elevation_azimuth(u));
    }

    let sensing_path = |scatterer: &Position3D, label: &str| -> Result<SensingPathAngles, IsacError> {
        let dep = elevation_azimuth(link_direction(irs, scatterer, label)?);
        let u_rx = link_direction(&config.receiver_pos, scatterer, &format!("receiver->{label}"))?;
        Ok(SensingPathAngles {
            irs: dep.virtual_angles(),
            receiver: u_rx.1,
        })
    };

    let target = sensing_path(&config.target_pos, "target")?;
    // Direct IRS-receiver path: departure from the IRS toward the receiver,
    // arrival at the receiver from the IRS.
    let direct_dep = elevation_azimuth(link_direction(irs, &config.receiver_pos, "IRS->receiver")?);
    let u_rx_irs = link_direction(&config.receiver_pos, irs, "receiver->IRS")?;
    let mut clutter = vec![SensingPathAngles {
        irs: direct_dep.virtual_angles(),
        receiver: u_rx_irs.1,
    }];
    for (c, pos) in config.clutter_pos.iter().enumerate() {
        clutter.push(sensing_path(pos, &format!("clutter{c}"))?);
    }

    Ok(AngleTable {
        tx_axis,
        bi_link,
        bi: bi_link.virtual_angles(),
        iu: iu_links.iter().map(|l| l.virtual_angles()).collect(),
        iu_links,
        target,
        clutter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_scene() -> SceneConfig {
        SceneConfig {
            transmitter_pos: Position3D::new(0.0, 0.0, 0.0),
            receiver_pos: Position3D::new(40.0, 0.0, 0.0),
            irs_pos: Position3D::new(30.0, 30.0, 0.0),
            user_pos: vec![Position3D::new(30.0, 20.0, 0.0)],
            target_pos: Position3D::new(40.0, 19.0, 0.0),
            clutter_pos: vec![Position3D::new(22.0, 25.0, 0.0)],
            n_b: 4,
            n_s: 4,
            n_i: 4,
            l_bi: 1,
            l_iu: 1,
            wavelength: 0.0107,
            region_half_width: 8.0 * 0.0107,
            min_spacing: 0.0107 / 2.0,
            power: 1.0,
            noise_power: 1e-12,
            pathloss_ref: 1e-3,
            pathloss_exp: 2.2,
            target_power_override: None,
        }
    }

    #[test]
    fn virtual_angles_axis_cases() {
        let v = virtual_angles(0.0, 0.0);
        assert!((v.theta - 1.0).abs() < 1e-15);
        assert!(v.omega.abs() < 1e-15);

        let v = virtual_angles(std::f64::consts::FRAC_PI_2, 1.234);
        assert!(v.theta.abs() < 1e-15);
        assert!(v.omega.abs() < 1e-15);

        let v = virtual_angles(std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_4);
        assert!((v.theta - 0.353553).abs() < 1e-6);
        assert!((v.omega - 0.353553).abs() < 1e-6);
    }

    #[test]
    fn pathloss_reference_values() {
        assert!((pathloss_power(1.0, 1e-3, 2.2).unwrap() - 1e-3).abs() < 1e-18);
        let v = pathloss_power(10.0, 1e-3, 2.2).unwrap();
        assert!((v - 6.3096e-6).abs() / 6.3096e-6 < 1e-4);
        assert!((pathloss_power(123.4, 0.5, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(pathloss_power(0.0, 1e-3, 2.2).is_err());
        assert!(pathloss_power(-1.0, 1e-3, 2.2).is_err());
    }

    #[test]
    fn geometry_axis_alignment() {
        // Endpoint on the +x axis from the IRS: azimuth 0, elevation 0.
        let mut cfg = small_scene();
        cfg.irs_pos = Position3D::new(0.0, 0.0, 0.0);
        cfg.transmitter_pos = Position3D::new(-3.0, -4.0, 0.0);
        cfg.user_pos = vec![Position3D::new(5.0, 0.0, 0.0)];
        let t = geometry_to_angles(&cfg).unwrap();
        assert!(t.iu_links[0].azimuth.abs() < 1e-12);
        assert!(t.iu_links[0].elevation.abs() < 1e-12);

        // Endpoint straight above: elevation pi/2.
        cfg.user_pos = vec![Position3D::new(0.0, 0.0, 1.0)];
        let t = geometry_to_angles(&cfg).unwrap();
        assert!((t.iu_links[0].elevation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn geometry_user_below_irs_points_minus_y() {
        // IRS (30,30,0), user (30,20,0): displacement along -y.
        let cfg = small_scene();
        let t = geometry_to_angles(&cfg).unwrap();
        let a = t.iu_links[0].azimuth;
        assert!((a - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // Virtual angles are the direction cosines of the displacement.
        assert!(t.iu[0].theta.abs() < 1e-12);
        assert!((t.iu[0].omega + 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_coincident_endpoints() {
        let mut cfg = small_scene();
        cfg.user_pos = vec![cfg.irs_pos];
        assert!(matches!(
            geometry_to_angles(&cfg),
            Err(IsacError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn geometry_translation_invariant() {
        let cfg = small_scene();
        let t0 = geometry_to_angles(&cfg).unwrap();
        let shift = Position3D::new(-17.0, 4.5, 2.25);
        let mv = |p: &Position3D| Position3D::new(p.x + shift.x, p.y + shift.y, p.z + shift.z);
        let mut cfg2 = cfg.clone();
        cfg2.transmitter_pos = mv(&cfg.transmitter_pos);
        cfg2.receiver_pos = mv(&cfg.receiver_pos);
        cfg2.irs_pos = mv(&cfg.irs_pos);
        cfg2.target_pos = mv(&cfg.target_pos);
        cfg2.user_pos = cfg.user_pos.iter().map(mv).collect();
        cfg2.clutter_pos = cfg.clutter_pos.iter().map(mv).collect();
        let t1 = geometry_to_angles(&cfg2).unwrap();
        assert!((t0.tx_axis - t1.tx_axis).abs() < 1e-12);
        assert!((t0.bi.theta - t1.bi.theta).abs() < 1e-12);
        assert!((t0.bi.omega - t1.bi.omega).abs() < 1e-12);
        assert!((t0.target.receiver - t1.target.receiver).abs() < 1e-12);
        assert!((t0.clutter[0].irs.theta - t1.clutter[0].irs.theta).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = small_scene();
        let text = cfg.to_toml_string();
        let back = SceneConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.n_i, cfg.n_i);
        assert!((back.wavelength - cfg.wavelength).abs() < 1e-15);
        assert_eq!(back.user_pos.len(), cfg.user_pos.len());
    }

    #[test]
    fn clutter_power_split() {
        let cfg = small_scene();
        let total = cfg.link_power_is().unwrap();
        let per = cfg.clutter_power().unwrap();
        assert!((per * 2.0 - total).abs() < 1e-18); // C = 1 physical clutter
        assert!((cfg.target_power().unwrap() - per).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn virtual_angles_inside_unit_disc(e in 0.0..std::f64::consts::PI, a in 0.0..(2.0 * std::f64::consts::PI)) {
            let v = virtual_angles(e, a);
            let norm2 = v.theta * v.theta + v.omega * v.omega;
            prop_assert!(norm2 <= 1.0 + 1e-12);
            prop_assert!((norm2 - e.cos() * e.cos()).abs() < 1e-12);
        }

        #[test]
        fn pathloss_decreasing(d1 in 0.1..100.0f64, scale in 1.01..10.0f64) {
            let near = pathloss_power(d1, 1e-3, 2.2).unwrap();
            let far = pathloss_power(d1 * scale, 1e-3, 2.2).unwrap();
            prop_assert!(far < near);
        }
    }
}
