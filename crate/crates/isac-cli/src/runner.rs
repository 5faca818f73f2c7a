//! Experiment implementations.
//!
//! Trials run in parallel with pre-assigned seeds derived from the base
//! seed, and results assemble in trial order, so output is deterministic
//! regardless of scheduling. Baseline comparisons share channel seeds across
//! solver arms (paired design).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use isac_core::baseline::{fixed_layout_baseline, fixed_layout_single_user};
use isac_core::bounds::{fixed_spacing_forms, FixedSpacingParams, PowerSplit};
use isac_core::channel::{derive_seed, perturb_layout, ChannelAngles, ChannelDraws};
use isac_core::error::IsacError;
use isac_core::metrics::{self, unit_disc_grid};
use isac_core::scene::SceneConfig;
use isac_core::solver_multi::{
    calibrated_rate_thresholds, random_feasible_layout, run_algorithm2, Algorithm2Params,
    MultiUserSolution,
};
use isac_core::solver_single::{solve_single_user, SingleUserParams, SingleUserScenario};

use crate::scenario::{desk_scene, single_user_scene};
use crate::spec::{ExperimentFamily, ExperimentSpec, SolverArm};

/// One emitted table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Aggregated sweep-point statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub mean: f64,
    pub variance: f64,
    pub trials: usize,
    pub solver_iterations: f64,
    /// Informational; never written into the deterministic data files.
    pub wall_seconds: f64,
}

/// All tables of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub tables: Vec<ResultTable>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Dispatches an experiment family.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    spec.validate()?;
    match spec.family {
        ExperimentFamily::BoundsSweep => bounds_sweep(spec),
        ExperimentFamily::SingleUser => single_user(spec),
        ExperimentFamily::MultiUser => multi_user(spec),
        ExperimentFamily::Coverage => coverage(spec),
        ExperimentFamily::Tradeoff => tradeoff(spec),
        ExperimentFamily::Robustness => robustness(spec),
    }
}

/// Closed-form bound curves over element spacing at several power levels.
fn bounds_sweep(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let scene = spec.scene.clone().unwrap_or_else(desk_scene);
    let n_i = 8;
    let lam = scene.wavelength;
    // Angle offsets on the kernel grid: the user and target sit on interior
    // kernel nodes, the direct path on an outer one.
    let delta_iu = 2.0 * 2.0 / n_i as f64;
    let delta_target = 2.0 * 2.0 / n_i as f64;
    let delta_direct = 2.0;
    let mut table = ResultTable::new(
        "bounds",
        &[
            "spacing_wavelengths",
            "power_dbm",
            "comm_gamma_lb",
            "comm_rate_lb",
            "sens_gamma_lb",
            "sens_metric_lb",
        ],
    );
    let powers_dbm = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
    for &spacing_wl in &spec.sweep.grid {
        for &p_dbm in &powers_dbm {
            let p = 10f64.powf(p_dbm / 10.0) / 1000.0;
            let params = FixedSpacingParams {
                n_b: 16,
                n_s: 16,
                n_i,
                spacing: spacing_wl * lam,
                wavelength: lam,
                split: PowerSplit::uniform(p, 1),
                sigma2_bi: scene.link_power_bi()?,
                sigma2_iu: vec![scene.link_power_iu(0)?],
                sigma2_target: scene.target_power()?,
                sigma2_direct: scene.clutter_power()?,
                delta_iu: vec![delta_iu],
                delta_target,
                delta_direct,
                rx_angle_target: 0.4,
                rx_angle_direct: -0.35,
                noise_power: scene.noise_power,
            };
            let report = fixed_spacing_forms(&params)?;
            table.rows.push(vec![
                spacing_wl,
                p_dbm,
                report.comm[0].gamma_lb,
                report.comm[0].rate_lb,
                report.sensing.gamma_lb,
                report.sensing.metric_lb,
            ]);
        }
    }
    Ok(ExperimentOutput {
        tables: vec![table],
    })
}

/// Randomized single-user geometry around the reference scene.
///
/// Draws are rejected while the position-system matrix is poorly
/// conditioned: when the target or user direction nearly coincides with the
/// direct IRS-receiver path, the admissible position lattice stretches far
/// beyond the movable region and no layout can satisfy the phase-position
/// equations there. The margin keeps the admissible-lattice pitch within the
/// region scale.
pub fn random_single_user_scene(n_i: usize, seed: u64) -> SceneConfig {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6e0));
    let mut cfg = single_user_scene(n_i);
    let irs = (cfg.irs_pos.x, cfg.irs_pos.y);
    for _attempt in 0..200 {
        let ang_u: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r_u: f64 = rng.gen_range(8.0..12.0);
        cfg.user_pos[0] = isac_core::scene::Position3D::new(
            irs.0 + r_u * ang_u.cos(),
            irs.1 + r_u * ang_u.sin(),
            0.0,
        );
        let ang_t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r_t: f64 = rng.gen_range(12.0..18.0);
        cfg.target_pos = isac_core::scene::Position3D::new(
            irs.0 + r_t * ang_t.cos(),
            irs.1 + r_t * ang_t.sin(),
            0.0,
        );
        if let Ok(table) = isac_core::scene::geometry_to_angles(&cfg) {
            let t = table.target.irs;
            let d = table.clutter[0].irs;
            let u = table.iu[0];
            let m00 = t.theta - d.theta;
            let m01 = t.omega - d.omega;
            let m10 = u.theta - d.theta;
            let m11 = u.omega - d.omega;
            // Smallest singular value of the 2x2 difference matrix.
            let a = m00 * m00 + m01 * m01;
            let b = m10 * m10 + m11 * m11;
            let c = m00 * m10 + m01 * m11;
            let tr = a + b;
            let det = (a * b - c * c).max(0.0);
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            let sigma_min_sq = 0.5 * (tr - disc);
            if sigma_min_sq.sqrt() >= 0.15 {
                break;
            }
        }
    }
    cfg
}

/// Per-trial single-user solve paired with the fixed-grid baseline.
fn single_user(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let mut per_trial = ResultTable::new(
        "trials",
        &[
            "n_i",
            "trial",
            "sinr_ratio",
            "scnr_ratio",
            "ppr_residual",
            "fixed_sinr_ratio",
            "fixed_scnr_ratio",
        ],
    );
    let mut summary = ResultTable::new(
        "summary",
        &[
            "n_i",
            "solved",
            "mean_sinr_ratio",
            "mean_scnr_ratio",
            "max_ppr_residual",
            "fixed_scnr_shortfall_count",
        ],
    );
    for &n_i_f in &spec.sweep.grid {
        let n_i = n_i_f as usize;
        let results: Vec<Option<(f64, f64, f64, f64, f64)>> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(spec.base_seed, trial as u64);
                let cfg = random_single_user_scene(n_i, seed);
                let scenario = SingleUserScenario::from_config(&cfg, seed).ok()?;
                let sol = solve_single_user(
                    &scenario,
                    &SingleUserParams {
                        seed,
                        ..Default::default()
                    },
                )
                .ok()?;
                let fixed = fixed_layout_baseline(n_i, cfg.wavelength, cfg.region_half_width)
                    .and_then(|grid| fixed_layout_single_user(&scenario, &grid))
                    .ok()?;
                Some((
                    sol.sinr / sol.sinr_upper,
                    sol.scnr / sol.scnr_upper,
                    sol.ppr.residual,
                    fixed.sinr / sol.sinr_upper,
                    fixed.scnr_best() / sol.scnr_upper,
                ))
            })
            .collect();
        let mut max_res: f64 = 0.0;
        let mut shortfall = 0usize;
        let mut sinr_sum = 0.0;
        let mut scnr_sum = 0.0;
        let mut solved = 0usize;
        for (trial, r) in results.iter().enumerate() {
            let Some(r) = r else { continue };
            per_trial
                .rows
                .push(vec![n_i_f, trial as f64, r.0, r.1, r.2, r.3, r.4]);
            max_res = max_res.max(r.2);
            sinr_sum += r.0;
            scnr_sum += r.1;
            solved += 1;
            if r.4 < 0.99 {
                shortfall += 1;
            }
        }
        summary.rows.push(vec![
            n_i_f,
            solved as f64,
            sinr_sum / solved.max(1) as f64,
            scnr_sum / solved.max(1) as f64,
            max_res,
            shortfall as f64,
        ]);
    }
    Ok(ExperimentOutput {
        tables: vec![per_trial, summary],
    })
}

/// One full multi-user solve for a given trial seed and arm.
///
/// `thresholds = None` calibrates the per-user rate thresholds to half of
/// what the realization supports at the starting layout, so scenario fading
/// never makes the constraint set empty; the thresholds used are returned.
pub fn solve_multi_trial(
    scene: &SceneConfig,
    thresholds: Option<&[f64]>,
    seed: u64,
    arm: SolverArm,
) -> Result<(MultiUserSolution, ChannelDraws, Vec<f64>), IsacError> {
    let angles = ChannelAngles::from_scene(scene, seed)?;
    let draws = ChannelDraws::sample(scene, &angles, seed)?;
    let layout0 = match arm {
        SolverArm::Algorithm2 | SolverArm::Sequential => {
            fixed_layout_baseline(scene.n_i, scene.wavelength, scene.region_half_width)
                .or_else(|_| random_feasible_layout(scene, seed))?
        }
        SolverArm::FixedLayout => {
            fixed_layout_baseline(scene.n_i, scene.wavelength, scene.region_half_width)?
        }
    };
    let thresholds = match thresholds {
        Some(t) => t.to_vec(),
        None => calibrated_rate_thresholds(scene, &draws, &layout0, 0.5)?,
    };
    let mut params = Algorithm2Params::with_thresholds(thresholds.clone());
    match arm {
        SolverArm::Algorithm2 => {}
        SolverArm::FixedLayout => params.optimize_positions = false,
        SolverArm::Sequential => params.sequential_positions = true,
    }
    let sol = run_algorithm2(scene, &draws, &layout0, &params)?;
    Ok((sol, draws, thresholds))
}

/// Convergence traces of the multi-user solver plus a beampattern map of the
/// first trial's solution.
fn multi_user(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let scene = spec.scene.clone().unwrap_or_else(desk_scene);
    type TrialResult = Result<(MultiUserSolution, ChannelDraws, Vec<f64>), IsacError>;
    let results: Vec<TrialResult> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(spec.base_seed, trial as u64);
            solve_multi_trial(&scene, spec.rate_thresholds.as_deref(), seed, spec.solver)
        })
        .collect();

    let mut trace = ResultTable::new(
        "trace",
        &[
            "trial",
            "iteration",
            "scnr",
            "scnr_log10",
            "constraint_violation",
            "admm_residual",
            "mppgd_iterations",
        ],
    );
    let mut summary = ResultTable::new(
        "summary",
        &[
            "trial",
            "converged",
            "outer_iterations",
            "final_scnr_log10",
            "max_objective_decrease",
            "infeasible",
        ],
    );
    let mut beampattern = ResultTable::new("beampattern", &["theta", "omega", "gain"]);
    for (trial, res) in results.iter().enumerate() {
        match res {
            Ok((sol, draws, _)) => {
                for row in &sol.trace.rows {
                    trace.rows.push(vec![
                        trial as f64,
                        row.iteration as f64,
                        row.objective,
                        row.objective_log10,
                        row.constraint_violation,
                        row.admm_residual,
                        row.mppgd_iterations as f64,
                    ]);
                }
                summary.rows.push(vec![
                    trial as f64,
                    sol.converged as u8 as f64,
                    sol.outer_iterations as f64,
                    sol.scnr.log10(),
                    sol.trace.max_decrease(),
                    0.0,
                ]);
                if trial == 0 {
                    let realization = draws.assemble(&scene, &sol.layout)?;
                    let grid = unit_disc_grid(41);
                    for p in metrics::beampattern_map(&scene, &realization, &sol.beams, &grid)? {
                        beampattern.rows.push(vec![p.theta, p.omega, p.gain]);
                    }
                }
            }
            Err(_) => {
                summary
                    .rows
                    .push(vec![trial as f64, 0.0, 0.0, f64::NAN, f64::NAN, 1.0]);
            }
        }
    }
    Ok(ExperimentOutput {
        tables: vec![trace, summary, beampattern],
    })
}

/// Paired movable/fixed coverage over an SCNR threshold grid.
fn coverage(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let scene = spec.scene.clone().unwrap_or_else(desk_scene);
    let samples: Vec<(f64, f64)> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(spec.base_seed, trial as u64);
            let t = spec.rate_thresholds.as_deref();
            let movable = solve_multi_trial(&scene, t, seed, SolverArm::Algorithm2)
                .map(|(s, _, _)| s.scnr)
                .unwrap_or(f64::NEG_INFINITY);
            let fixed = solve_multi_trial(&scene, t, seed, SolverArm::FixedLayout)
                .map(|(s, _, _)| s.scnr)
                .unwrap_or(f64::NEG_INFINITY);
            (movable, fixed)
        })
        .collect();
    let movable: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let fixed: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut table = ResultTable::new(
        "coverage",
        &["threshold_db", "coverage_movable", "coverage_fixed", "trials"],
    );
    for &gamma_db in &spec.sweep.grid {
        let gamma = 10f64.powf(gamma_db / 10.0);
        table.rows.push(vec![
            gamma_db,
            metrics::coverage_probability(&movable, gamma)?,
            metrics::coverage_probability(&fixed, gamma)?,
            spec.trials as f64,
        ]);
    }
    Ok(ExperimentOutput {
        tables: vec![table],
    })
}

/// Sensing performance as the per-user rate threshold tightens.
fn tradeoff(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let scene = spec.scene.clone().unwrap_or_else(desk_scene);
    let mut table = ResultTable::new(
        "tradeoff",
        &[
            "rate_threshold",
            "mean_scnr_log10",
            "se_scnr_log10",
            "infeasible",
            "trials",
        ],
    );
    for &r0 in &spec.sweep.grid {
        let thresholds = vec![r0; scene.num_users()];
        let values: Vec<Option<f64>> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(spec.base_seed, trial as u64);
                solve_multi_trial(&scene, Some(&thresholds), seed, spec.solver)
                    .ok()
                    .map(|(s, _, _)| s.scnr.log10())
            })
            .collect();
        let ok: Vec<f64> = values.iter().filter_map(|v| *v).collect();
        let infeasible = values.len() - ok.len();
        let (mean, se) = if ok.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_and_se(&ok)
        };
        table.rows.push(vec![
            r0,
            mean,
            se,
            infeasible as f64,
            spec.trials as f64,
        ]);
    }
    Ok(ExperimentOutput {
        tables: vec![table],
    })
}

/// Degradation under element movement errors or channel-estimate errors.
///
/// `sweep.variable == "movement"` interprets the grid as offset scales in
/// wavelengths; `"csi"` interprets it as estimate-error variances relative
/// to the per-entry transmitter-IRS link power.
fn robustness(spec: &ExperimentSpec) -> Result<ExperimentOutput, IsacError> {
    let scene = spec.scene.clone().unwrap_or_else(desk_scene);
    let movement = spec.sweep.variable != "csi";
    let sigma2_bi = scene.link_power_bi()?;
    let mut table = ResultTable::new(
        "robustness",
        &["scale", "mean_scnr_log10", "se_scnr_log10", "trials"],
    );
    // One clean solve per trial, reused across the grid (movement); CSI
    // errors need one solve per grid point on the perturbed channels.
    let clean: Vec<Option<(MultiUserSolution, ChannelDraws, Vec<f64>)>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(spec.base_seed, trial as u64);
            solve_multi_trial(&scene, spec.rate_thresholds.as_deref(), seed, spec.solver).ok()
        })
        .collect();
    for &scale in &spec.sweep.grid {
        let values: Vec<f64> = if movement {
            clean
                .par_iter()
                .enumerate()
                .filter_map(|(trial, entry)| {
                    let (sol, draws, _) = entry.as_ref()?;
                    let seed = derive_seed(spec.base_seed, trial as u64);
                    let moved = perturb_layout(
                        &sol.layout,
                        scale * scene.wavelength,
                        scene.region_half_width,
                        derive_seed(seed, scale.to_bits()),
                    );
                    let real = draws.assemble(&scene, &moved).ok()?;
                    Some(metrics::scnr_multi(&scene, &real, &sol.beams).log10())
                })
                .collect()
        } else {
            (0..spec.trials)
                .into_par_iter()
                .filter_map(|trial| {
                    let seed = derive_seed(spec.base_seed, trial as u64);
                    let angles = ChannelAngles::from_scene(&scene, seed).ok()?;
                    let truth = ChannelDraws::sample(&scene, &angles, seed).ok()?;
                    let noisy = truth.perturb_csi(&scene, scale * sigma2_bi, derive_seed(seed, 0xce));
                    let layout0 = fixed_layout_baseline(
                        scene.n_i,
                        scene.wavelength,
                        scene.region_half_width,
                    )
                    .ok()?;
                    let thresholds = match spec.rate_thresholds.as_deref() {
                        Some(t) => t.to_vec(),
                        None => calibrated_rate_thresholds(&scene, &noisy, &layout0, 0.5).ok()?,
                    };
                    let mut params = Algorithm2Params::with_thresholds(thresholds);
                    params.optimize_positions = spec.solver != SolverArm::FixedLayout;
                    let sol = run_algorithm2(&scene, &noisy, &layout0, &params).ok()?;
                    // Evaluate the noisy-channel design on the true channels.
                    let real = truth.assemble(&scene, &sol.layout).ok()?;
                    Some(metrics::scnr_multi(&scene, &real, &sol.beams).log10())
                })
                .collect()
        };
        let (mean, se) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_and_se(&values)
        };
        table
            .rows
            .push(vec![scale, mean, se, values.len() as f64]);
    }
    Ok(ExperimentOutput {
        tables: vec![table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::SweepSpec;

    fn tiny_spec(family: ExperimentFamily, variable: &str, grid: Vec<f64>) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            family,
            solver: SolverArm::Algorithm2,
            trials: 2,
            base_seed: 11,
            sweep: SweepSpec {
                variable: variable.into(),
                grid,
            },
            scene: None,
            rate_thresholds: Some(vec![0.2, 0.2]),
        }
    }

    #[test]
    fn bounds_sweep_rows_ordered() {
        let spec = tiny_spec(ExperimentFamily::BoundsSweep, "spacing", vec![0.5, 2.0]);
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.tables[0].rows.len(), 2 * 7);
        assert!(out.tables[0].rows[0][0] <= out.tables[0].rows.last().unwrap()[0]);
    }

    #[test]
    fn single_user_family_runs() {
        let mut spec = tiny_spec(ExperimentFamily::SingleUser, "n_i", vec![4.0]);
        spec.trials = 2;
        let out = run_experiment(&spec).unwrap();
        let summary = &out.tables[1];
        assert_eq!(summary.rows.len(), 1);
        // Mean ratios at the bounds.
        assert!((summary.rows[0][2] - 1.0).abs() < 1e-6);
        assert!((summary.rows[0][3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_rerun() {
        let spec = tiny_spec(ExperimentFamily::MultiUser, "none", vec![0.0]);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        let fa = crate::emit::format_csv(
            &a.tables[0].header.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            &a.tables[0].rows,
        );
        let fb = crate::emit::format_csv(
            &b.tables[0].header.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            &b.tables[0].rows,
        );
        assert_eq!(fa, fb);
    }

    #[test]
    fn coverage_non_increasing() {
        let mut spec = tiny_spec(ExperimentFamily::Coverage, "threshold_db", vec![
            -20.0, 0.0, 20.0, 40.0,
        ]);
        spec.trials = 3;
        let out = run_experiment(&spec).unwrap();
        let rows = &out.tables[0].rows;
        for w in rows.windows(2) {
            assert!(w[1][1] <= w[0][1] + 1e-12);
            assert!(w[1][2] <= w[0][2] + 1e-12);
        }
    }
}
