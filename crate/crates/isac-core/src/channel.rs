//! Field-response channel synthesis for movable-element IRS links.
//!
//! Conventions (fixed once, checked by the scalar cascade test below):
//! - field-response and steering entries carry the positive exponent
//!   `exp(+j * 2*pi/lambda * rho)`;
//! - `H_BI[m, n] = sum_l alpha_l * exp(-j*2pi/lambda * rho_l^BI(r_m))
//!   * exp(+j*2pi/lambda * y_n * phi_l^B)` (the conjugation enters through
//!   the receive-side adjoint in `F^H Sigma G`);
//! - the user channel is stored as the column `h_k` with entries
//!   `h_k[m] = sum_l conj(alpha_l) * exp(-j*2pi/lambda * rho_l^IU(r_m))`, so
//!   the row used by the metrics is its adjoint `h_k^H`.
//!
//! Randomness is explicit: every sampling operation takes a seed and the
//! per-link streams are derived deterministically from it, so realizations
//! are bit-reproducible and safe to farm out to concurrent trial workers.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::IsacError;
use crate::scene::{SceneConfig, SensingPathAngles, VirtualAngles};
use crate::{CMat, CVec};

const TAU: f64 = std::f64::consts::TAU;

/// 2-D positions of the movable reflecting elements, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementLayout {
    pub positions: Vec<(f64, f64)>,
}

impl ElementLayout {
    pub fn new(positions: Vec<(f64, f64)>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Smallest pairwise Euclidean distance; `f64::INFINITY` for < 2 elements.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.positions.len() {
            for j in (i + 1)..self.positions.len() {
                let (xi, yi) = self.positions[i];
                let (xj, yj) = self.positions[j];
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// True when every pair is at least `min_spacing` apart.
    pub fn spacing_feasible(&self, min_spacing: f64) -> bool {
        self.min_pairwise_distance() >= min_spacing
    }

    /// True when every coordinate lies inside `[-half_width, half_width]`.
    pub fn in_region(&self, half_width: f64) -> bool {
        self.positions
            .iter()
            .all(|&(x, y)| x.abs() <= half_width && y.abs() <= half_width)
    }

    /// Clamps every coordinate to the region. Used by projections and by the
    /// movement-error model.
    pub fn clamped(&self, half_width: f64) -> ElementLayout {
        ElementLayout::new(
            self.positions
                .iter()
                .map(|&(x, y)| {
                    (
                        x.clamp(-half_width, half_width),
                        y.clamp(-half_width, half_width),
                    )
                })
                .collect(),
        )
    }
}

/// Complex gains of the paths on one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResponse {
    pub gains: Vec<Complex64>,
    /// Total link power `sigma_0^2`; each path carries `sigma_0^2 / L`.
    pub link_power: f64,
}

impl PathResponse {
    pub fn num_paths(&self) -> usize {
        self.gains.len()
    }

    pub fn per_path_power(&self) -> f64 {
        self.link_power / self.gains.len() as f64
    }
}

/// IRS phase-shift vector with unit-modulus entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShifts {
    xi: Vec<Complex64>,
}

impl PhaseShifts {
    /// Validates that every entry has unit modulus (tolerance 1e-12).
    pub fn new(xi: Vec<Complex64>) -> Result<Self, IsacError> {
        for (m, v) in xi.iter().enumerate() {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(IsacError::Configuration(format!(
                    "phase shift entry {m} has modulus {} != 1",
                    v.norm()
                )));
            }
        }
        Ok(Self { xi })
    }

    pub fn from_phases(theta: &[f64]) -> Self {
        Self {
            xi: theta.iter().map(|&t| Complex64::cis(t)).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            xi: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    /// Entrywise projection of an arbitrary complex vector onto the unit
    /// circle; zero entries map to 1.
    pub fn project(v: &CVec) -> Self {
        Self {
            xi: v
                .iter()
                .map(|z| {
                    if z.norm() == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        z / z.norm()
                    }
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.xi
    }

    pub fn as_vector(&self) -> CVec {
        CVec::from_column_slice(&self.xi)
    }

    /// Phase angles in radians.
    pub fn phases(&self) -> Vec<f64> {
        self.xi.iter().map(|z| z.arg()).collect()
    }
}

/// Per-path angle tables of one scenario; fixed once per scenario while the
/// path gains vary across Monte Carlo trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelAngles {
    /// Scalar ULA virtual angle at the transmitter, one per BI path.
    pub tx_axis: Vec<f64>,
    /// Arrival virtual angles at the IRS, one per BI path.
    pub bi: Vec<VirtualAngles>,
    /// Departure virtual angles at the IRS toward each user, per path.
    pub iu: Vec<Vec<VirtualAngles>>,
    /// Target return angles.
    pub target: SensingPathAngles,
    /// Clutter return angles; index 0 is the direct IRS-receiver path.
    pub clutter: Vec<SensingPathAngles>,
}

impl ChannelAngles {
    /// Builds the scenario angle set: the first path of each link is the
    /// geometric line-of-sight path, additional paths take uniform random
    /// in-plane azimuths (scatterers in the array plane).
    pub fn from_scene(config: &SceneConfig, seed: u64) -> Result<Self, IsacError> {
        let table = crate::scene::geometry_to_angles(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x414e_474c));
        let mut tx_axis = vec![table.tx_axis];
        let mut bi = vec![table.bi];
        for _ in 1..config.l_bi {
            let psi_tx: f64 = rng.gen_range(0.0..TAU);
            let psi_irs: f64 = rng.gen_range(0.0..TAU);
            tx_axis.push(psi_tx.sin());
            bi.push(VirtualAngles::new(psi_irs.cos(), psi_irs.sin()));
        }
        let mut iu = Vec::with_capacity(config.num_users());
        for k in 0..config.num_users() {
            let mut paths = vec![table.iu[k]];
            for _ in 1..config.l_iu {
                let psi: f64 = rng.gen_range(0.0..TAU);
                paths.push(VirtualAngles::new(psi.cos(), psi.sin()));
            }
            iu.push(paths);
        }
        Ok(Self {
            tx_axis,
            bi,
            iu,
            target: table.target,
            clutter: table.clutter,
        })
    }

    pub fn num_bi_paths(&self) -> usize {
        self.bi.len()
    }

    pub fn num_iu_paths(&self) -> usize {
        self.iu.first().map_or(0, |v| v.len())
    }
}

/// Additive channel-estimate errors; constant with respect to the element
/// layout so gradients through positions differentiate only the modeled part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsiError {
    pub h_bi: CMat,
    pub h_iu: Vec<CVec>,
    /// Additive error on the target response matrix (N_S x N_I).
    pub target: CMat,
    /// Additive error on the summed clutter response matrix (N_S x N_I).
    pub clutter: CMat,
}

/// One Monte Carlo draw of all random link gains, plus the fixed angle set.
/// Assembling at a layout produces a [`ChannelRealization`]; re-assembly at
/// new positions reuses the same gains, which is what the position optimizer
/// needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelDraws {
    pub angles: ChannelAngles,
    pub bi: PathResponse,
    pub iu: Vec<PathResponse>,
    pub target_gain: Complex64,
    /// One gain per clutter return; index 0 is the direct path.
    pub clutter_gains: Vec<Complex64>,
    #[serde(default)]
    pub csi_error: Option<CsiError>,
}

impl ChannelDraws {
    /// Samples all link gains for one trial. Streams are split per link so
    /// that adding users or clutters does not shift the other draws.
    pub fn sample(config: &SceneConfig, angles: &ChannelAngles, seed: u64) -> Result<Self, IsacError> {
        let bi = sample_paths(derive_seed(seed, 0xb1), config.l_bi, config.link_power_bi()?);
        let mut iu = Vec::with_capacity(config.num_users());
        for k in 0..config.num_users() {
            iu.push(sample_paths(
                derive_seed(seed, 0x1000 + k as u64),
                config.l_iu,
                config.link_power_iu(k)?,
            ));
        }
        let target_gain = sample_paths(derive_seed(seed, 0x7a17), 1, config.target_power()?).gains[0];
        let clutter_power = config.clutter_power()?;
        let clutter_gains = (0..=config.num_clutters())
            .map(|c| sample_paths(derive_seed(seed, 0x2000 + c as u64), 1, clutter_power).gains[0])
            .collect();
        Ok(Self {
            angles: angles.clone(),
            bi,
            iu,
            target_gain,
            clutter_gains,
            csi_error: None,
        })
    }

    /// Returns a copy carrying channel-estimate errors of per-entry variance
    /// `delta2` on `H_BI` and each `h_IU,k`, and of per-entry variance
    /// `delta2` on the stacked target-plus-clutter response matrix (split
    /// evenly between the target and clutter parts).
    pub fn perturb_csi(&self, config: &SceneConfig, delta2: f64, seed: u64) -> Self {
        let mut out = self.clone();
        if delta2 == 0.0 {
            return out;
        }
        let n_i = config.n_i;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc51e));
        let half = delta2 / 2.0;
        let err = CsiError {
            h_bi: complex_gaussian_matrix(&mut rng, n_i, config.n_b, delta2),
            h_iu: (0..config.num_users())
                .map(|_| complex_gaussian_matrix(&mut rng, n_i, 1, delta2).column(0).into_owned())
                .collect(),
            target: complex_gaussian_matrix(&mut rng, config.n_s, n_i, half),
            clutter: complex_gaussian_matrix(&mut rng, config.n_s, n_i, half),
        };
        // Accumulate on top of any existing error.
        out.csi_error = Some(match out.csi_error.take() {
            None => err,
            Some(prev) => CsiError {
                h_bi: prev.h_bi + err.h_bi,
                h_iu: prev
                    .h_iu
                    .into_iter()
                    .zip(err.h_iu)
                    .map(|(a, b)| a + b)
                    .collect(),
                target: prev.target + err.target,
                clutter: prev.clutter + err.clutter,
            },
        });
        out
    }

    /// Assembles the channel matrices at the given element layout.
    pub fn assemble(&self, config: &SceneConfig, layout: &ElementLayout) -> Result<ChannelRealization, IsacError> {
        if layout.len() != config.n_i {
            return Err(IsacError::Configuration(format!(
                "layout has {} elements, scene expects {}",
                layout.len(),
                config.n_i
            )));
        }
        if self.bi.num_paths() != self.angles.num_bi_paths() {
            return Err(IsacError::Configuration(
                "BI gain count does not match BI angle count".into(),
            ));
        }
        if self.iu.len() != config.num_users() || self.angles.iu.len() != config.num_users() {
            return Err(IsacError::Configuration("user count mismatch".into()));
        }

        let lam = config.wavelength;
        let n_i = config.n_i;
        let n_b = config.n_b;
        let l_bi = self.bi.num_paths();
        let tx_pos = config.tx_antenna_positions();

        // H_BI = F^H Sigma G, built column-wise from field-response vectors.
        let mut f = CMat::zeros(l_bi, n_i);
        for (m, &pos) in layout.positions.iter().enumerate() {
            let col = field_response_vector(pos, &self.angles.bi, lam);
            f.set_column(m, &col);
        }
        let mut g = CMat::zeros(l_bi, n_b);
        for n in 0..n_b {
            for (l, &axis) in self.angles.tx_axis.iter().enumerate() {
                g[(l, n)] = Complex64::cis(TAU / lam * tx_pos[n] * axis);
            }
        }
        let sigma = CMat::from_diagonal(&CVec::from_column_slice(&self.bi.gains));
        let mut h_bi = f.adjoint() * sigma * g;

        // h_k[m] = sum_l conj(alpha_l) exp(-j 2pi/lambda rho_l^IU(r_m)).
        let mut h_iu = Vec::with_capacity(config.num_users());
        for (k, resp) in self.iu.iter().enumerate() {
            if resp.num_paths() != self.angles.iu[k].len() {
                return Err(IsacError::Configuration(
                    "IU gain count does not match IU angle count".into(),
                ));
            }
            let mut h = CVec::zeros(n_i);
            for (m, &pos) in layout.positions.iter().enumerate() {
                let frv = field_response_vector(pos, &self.angles.iu[k], lam);
                let mut acc = Complex64::new(0.0, 0.0);
                for (l, gain) in resp.gains.iter().enumerate() {
                    acc += gain.conj() * frv[l].conj();
                }
                h[m] = acc;
            }
            h_iu.push(h);
        }

        if let Some(err) = &self.csi_error {
            h_bi += &err.h_bi;
            for (k, h) in h_iu.iter_mut().enumerate() {
                *h += &err.h_iu[k];
            }
        }

        Ok(ChannelRealization {
            h_bi,
            h_iu,
            target_gain: self.target_gain,
            clutter_gains: self.clutter_gains.clone(),
            angles: self.angles.clone(),
            layout: layout.clone(),
            sensing_error: self
                .csi_error
                .as_ref()
                .map(|e| SensingError {
                    target: e.target.clone(),
                    clutter: e.clutter.clone(),
                }),
        })
    }
}

/// Additive estimate error on the sensing response matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensingError {
    pub target: CMat,
    pub clutter: CMat,
}

/// Assembled channels of one Monte Carlo draw at one element layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Transmitter-to-IRS channel, N_I x N_B.
    pub h_bi: CMat,
    /// Per-user IRS channels as columns h_k (the metrics use h_k^H).
    pub h_iu: Vec<CVec>,
    pub target_gain: Complex64,
    /// Clutter gains; index 0 is the direct IRS-receiver path.
    pub clutter_gains: Vec<Complex64>,
    pub angles: ChannelAngles,
    pub layout: ElementLayout,
    #[serde(default)]
    pub sensing_error: Option<SensingError>,
}

impl ChannelRealization {
    pub fn num_users(&self) -> usize {
        self.h_iu.len()
    }

    /// Row vector `h_k^H Theta H_BI` as a length-N_B complex vector.
    pub fn effective_row(&self, k: usize, xi: &PhaseShifts) -> CVec {
        let n_b = self.h_bi.ncols();
        let mut row = CVec::zeros(n_b);
        for m in 0..self.h_bi.nrows() {
            let w = self.h_iu[k][m].conj() * xi.entries()[m];
            for n in 0..n_b {
                row[n] += w * self.h_bi[(m, n)];
            }
        }
        row
    }

    /// IRS steering vector at the realization's layout.
    pub fn irs_steering(&self, va: VirtualAngles, wavelength: f64) -> CVec {
        steering_irs(&self.layout, va, wavelength)
    }

    /// Target response matrix `alpha_T a_S^*(target) a_I^T(target)` plus any
    /// estimate error, N_S x N_I.
    pub fn target_matrix(&self, config: &SceneConfig) -> CMat {
        let mut m = response_matrix(
            self.target_gain,
            &self.angles.target,
            &self.layout,
            config,
        );
        if let Some(err) = &self.sensing_error {
            m += &err.target;
        }
        m
    }

    /// Summed clutter response matrix (direct path plus clutters) plus any
    /// estimate error, N_S x N_I.
    pub fn clutter_matrix(&self, config: &SceneConfig) -> CMat {
        let mut total = CMat::zeros(config.n_s, config.n_i);
        for (c, path) in self.angles.clutter.iter().enumerate() {
            total += response_matrix(self.clutter_gains[c], path, &self.layout, config);
        }
        if let Some(err) = &self.sensing_error {
            total += &err.clutter;
        }
        total
    }

    /// Adds channel-estimate noise of per-entry variance `delta2`; the target
    /// and clutter response matrices split the stacked sensing error evenly.
    pub fn perturb_csi(&self, config: &SceneConfig, delta2: f64, seed: u64) -> ChannelRealization {
        let mut out = self.clone();
        if delta2 == 0.0 {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc51e));
        let half = delta2 / 2.0;
        out.h_bi += complex_gaussian_matrix(&mut rng, self.h_bi.nrows(), self.h_bi.ncols(), delta2);
        for h in out.h_iu.iter_mut() {
            *h += complex_gaussian_matrix(&mut rng, h.nrows(), 1, delta2)
                .column(0)
                .into_owned();
        }
        let target = complex_gaussian_matrix(&mut rng, config.n_s, config.n_i, half);
        let clutter = complex_gaussian_matrix(&mut rng, config.n_s, config.n_i, half);
        out.sensing_error = Some(match out.sensing_error.take() {
            None => SensingError { target, clutter },
            Some(prev) => SensingError {
                target: prev.target + target,
                clutter: prev.clutter + clutter,
            },
        });
        out
    }

    /// Serializes to the documented JSON snapshot (complex entries as
    /// `[re, im]` pairs via serde).
    pub fn to_json(&self) -> Result<String, IsacError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, IsacError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn response_matrix(
    gain: Complex64,
    path: &SensingPathAngles,
    layout: &ElementLayout,
    config: &SceneConfig,
) -> CMat {
    let a_s = steering_ula(&config.rx_antenna_positions(), path.receiver, config.wavelength);
    let a_i = steering_irs(layout, path.irs, config.wavelength);
    let mut m = CMat::zeros(config.n_s, config.n_i);
    for r in 0..config.n_s {
        let left = gain * a_s[r].conj();
        for c in 0..config.n_i {
            m[(r, c)] = left * a_i[c];
        }
    }
    m
}

/// Field-response vector of a 2-D element position across `angles` paths:
/// entry `l` is `exp(j 2pi/lambda (x*theta_l + y*omega_l))`.
pub fn field_response_vector(position: (f64, f64), angles: &[VirtualAngles], wavelength: f64) -> CVec {
    let (x, y) = position;
    CVec::from_iterator(
        angles.len(),
        angles
            .iter()
            .map(|a| Complex64::cis(TAU / wavelength * (x * a.theta + y * a.omega))),
    )
}

/// ULA steering vector: entry `m` is `exp(j 2pi/lambda y_m * angle)`.
pub fn steering_ula(antenna_y_positions: &[f64], virtual_angle: f64, wavelength: f64) -> CVec {
    CVec::from_iterator(
        antenna_y_positions.len(),
        antenna_y_positions
            .iter()
            .map(|&y| Complex64::cis(TAU / wavelength * y * virtual_angle)),
    )
}

/// IRS steering vector over an element layout:
/// entry `m` is `exp(j 2pi/lambda (x_m*theta + y_m*omega))`.
pub fn steering_irs(layout: &ElementLayout, angles: VirtualAngles, wavelength: f64) -> CVec {
    CVec::from_iterator(
        layout.len(),
        layout
            .positions
            .iter()
            .map(|&(x, y)| Complex64::cis(TAU / wavelength * (x * angles.theta + y * angles.omega))),
    )
}

/// Draws `num_paths` i.i.d. circularly-symmetric complex Gaussian gains with
/// per-path variance `link_power / num_paths`. Deterministic per seed.
pub fn sample_paths(seed: u64, num_paths: usize, link_power: f64) -> PathResponse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_path = link_power / num_paths as f64;
    let s = (per_path / 2.0).sqrt();
    let gains = (0..num_paths)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        })
        .collect();
    PathResponse { gains, link_power }
}

/// Applies zero-mean Gaussian offsets of standard deviation `error_scale` to
/// each coordinate and clamps the result to the movable region. Spacing
/// feasibility is intentionally not re-enforced; callers re-check it.
pub fn perturb_layout(
    layout: &ElementLayout,
    error_scale: f64,
    region_half_width: f64,
    seed: u64,
) -> ElementLayout {
    if error_scale == 0.0 {
        return layout.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x3a0e));
    let moved = ElementLayout::new(
        layout
            .positions
            .iter()
            .map(|&(x, y)| {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                (x + error_scale * dx, y + error_scale * dy)
            })
            .collect(),
    );
    moved.clamped(region_half_width)
}

/// Deterministic stream split: mixes a base seed with a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined word.
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn complex_gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, variance: f64) -> CMat {
    let s = (variance / 2.0).sqrt();
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}
