//! End-to-end runs: level set, sweep, and the certification checks, for each
//! of the built-in examples.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Example, RunConfig};
use crate::construct::{
    attainable_bound, frame_rank, hat_v00_piece_charts, sample_piece, solve_level_set, sweep, sweep_generators, Chart,
    ConormalSpec, LevelSetPoint, LevelSetProblem, LevelSetResult, SeedCounts, SweepSample,
};
use crate::error::{Result, SlagError};
use crate::lie::{a_h_estimate, centrality_defect, f_h_modulus_check, CoVector, SkewMatrix, SubgroupSpec};
use crate::moment::moment_covector;
use crate::quadric::{calibrate_volume_constant, szoke_map, HolomorphicVolume, RealFrame, VolumeCalibration};
use crate::stenzel::{build_potential, build_potential_with_grid, PotentialTable};
use crate::verify::{
    check_angle_constancy, check_isotropic, check_perpendicular_generalized, check_perpendicular_strict,
    check_theorem_phase, frame_from_lemma, lagrangian_angle, mean_curvature_proxy, AngleReport, ChartField, Check,
    SweptField, VerificationReport,
};

/// Points of the sweep at which `|∇θ|` is estimated.
const GRADIENT_POINTS: usize = 3;
const GRADIENT_STEP: f64 = 1e-3;
const GRADIENT_TOL: f64 = 1e-5;
const A_H_TOL: f64 = 1e-6;
const F_H_TOL: f64 = 1e-10;
const CALIBRATION_SAMPLES: usize = 20;

/// Potential and volume normalization for one configuration.
pub struct Context {
    pub config: RunConfig,
    pub potential: PotentialTable,
    pub calibration: VolumeCalibration,
}

impl Context {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let config = config.resolved()?;
        let n = config.example.n();
        let ode = &config.ode;
        let potential = match ode.grid_size {
            Some(g) => build_potential_with_grid(n, ode.c, ode.t_max, ode.tol, g)?,
            None => build_potential(n, ode.c, ode.t_max, ode.tol)?,
        };
        let calibration = calibrate_volume_constant(&potential, CALIBRATION_SAMPLES, config.sampling.seed)?;
        Ok(Context { config, potential, calibration })
    }

    pub fn volume(&self) -> HolomorphicVolume {
        self.calibration.volume()
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null)
    }
}

/// Group, chart and constraints of an example at a given level.
pub struct ExampleSetup {
    pub example: Example,
    pub group: SubgroupSpec,
    pub chart: ConormalSpec,
    pub k_basis: Vec<SkewMatrix>,
    pub target: CoVector,
    pub active: Vec<usize>,
    pub seed_mask: Vec<usize>,
    /// Strict perpendicularity is expected, not only the generalized form.
    pub strict: bool,
}

impl ExampleSetup {
    pub fn new(example: Example, levels: &[f64]) -> Result<Self> {
        if levels.len() != example.level_len() {
            return Err(SlagError::Config(format!(
                "example {example} takes {} level component(s), got {}",
                example.level_len(),
                levels.len()
            )));
        }
        let u1 = |chart: ConormalSpec, strict: bool| ExampleSetup {
            example,
            group: SubgroupSpec::u1diag6(),
            chart,
            k_basis: Vec::new(),
            target: CoVector::new(levels.to_vec()),
            active: vec![0],
            seed_mask: Vec::new(),
            strict,
        };
        Ok(match example {
            Example::U1L1 => u1(ConormalSpec::l1(), true),
            Example::U1L2 => u1(ConormalSpec::l2(), false),
            Example::So223 => {
                let group = SubgroupSpec::so223();
                let k = group.basis()[4].clone();
                ExampleSetup {
                    example,
                    group,
                    chart: ConormalSpec::l_so223(),
                    k_basis: vec![k],
                    target: CoVector::new(vec![levels[0], levels[1], 0.0, 0.0, 0.0]),
                    active: vec![0, 1, 2, 3],
                    // ξ₆ and ξ₇ start at zero
                    seed_mask: vec![4, 5],
                    strict: true,
                }
            }
            Example::Conormal => ExampleSetup {
                example,
                group: SubgroupSpec::u1diag6(),
                chart: ConormalSpec::l1(),
                k_basis: Vec::new(),
                target: CoVector::new(vec![]),
                active: Vec::new(),
                seed_mask: Vec::new(),
                strict: true,
            },
        })
    }

    pub fn problem(&self) -> LevelSetProblem<'_> {
        LevelSetProblem {
            chart: &self.chart,
            group: &self.group,
            k_basis: &self.k_basis,
            target: self.target.clone(),
            active: self.active.clone(),
            seed_mask: self.seed_mask.clone(),
        }
    }

    pub fn generators(&self) -> Vec<SkewMatrix> {
        sweep_generators(&self.group, &self.k_basis).into_iter().map(|g| self.group.basis()[g].clone()).collect()
    }

    /// Scalar the attainability bound is compared with.
    fn level_size(&self) -> f64 {
        self.active.iter().map(|&a| self.target.components[a].abs()).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Attainability {
    pub bound: f64,
    pub level: f64,
    pub attainable: bool,
}

/// Levels whose size reaches `max 𝒦(s)·s` over the reachable fibers are empty.
pub fn attainability(ctx: &Context, setup: &ExampleSetup) -> Result<Attainability> {
    let bound = attainable_bound(&ctx.potential, 0.5 * ctx.potential.t_max())?;
    let level = setup.level_size();
    Ok(Attainability { bound, level, attainable: level < bound })
}

/// Sweep output with the Lagrangian angle of every swept frame.
pub struct SweptData {
    pub points: Vec<LevelSetPoint>,
    pub samples: Vec<SweepSample>,
    pub thetas: Vec<f64>,
}

fn counts_map(counts: &SeedCounts) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    m.insert("attempted".into(), counts.attempted);
    m.insert("converged".into(), counts.converged);
    m.insert("nonconverged".into(), counts.nonconverged);
    m.insert("nonprincipal".into(), counts.nonprincipal);
    m.insert("irregular".into(), counts.irregular);
    m
}

fn level_points(ctx: &Context, setup: &ExampleSetup) -> Result<Option<(Vec<LevelSetPoint>, SeedCounts)>> {
    if !attainability(ctx, setup)?.attainable {
        return Ok(None);
    }
    let problem = setup.problem();
    match solve_level_set(&ctx.potential, &problem, ctx.config.v_count(), ctx.config.sampling.seed)? {
        LevelSetResult::Points { points, counts, .. } => Ok(Some((points, counts))),
        LevelSetResult::Empty { .. } => Ok(None),
    }
}

/// Runs every check on level-set points that are already sampled, filling `report`.
fn certify(
    ctx: &Context,
    setup: &ExampleSetup,
    points: Vec<LevelSetPoint>,
    report: &mut VerificationReport,
) -> Result<SweptData> {
    let tol = ctx.config.tolerances;
    let potential = &ctx.potential;
    let volume = ctx.volume();
    let gens = setup.generators();
    let hk_dim = gens.len();
    let v_dim = points.first().map_or(0, |p| p.v_tangent.len());
    let n = potential.n();
    report.counts.insert("v_points".into(), points.len());
    report.counts.insert("v_dim".into(), v_dim);
    report.counts.insert("hk_dim".into(), hk_dim);
    report.push(Check::flag("lagrangian_dimension", v_dim + hk_dim == n));

    // perpendicularity and the lemma frame at every level-set point
    let per_point: Vec<Result<(f64, f64, bool, f64, f64)>> = points
        .par_iter()
        .map(|pt| {
            let general = check_perpendicular_generalized(potential, &gens, pt)?;
            let strict = if setup.strict {
                check_perpendicular_strict(potential, &setup.group, &pt.quadric, &pt.l_frame)?
            } else {
                0.0
            };
            let lemma = match frame_from_lemma(potential, pt, &gens, tol.perp) {
                Ok(l) => l.orthonormality.max(l.normality).max(l.i_tangency),
                Err(SlagError::Decomposition(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            let theta_l = lagrangian_angle(potential, &volume, &pt.l_frame, tol.omega)?.theta_mod_pi;
            Ok((general.residual, strict, general.condition_ii, lemma, theta_l))
        })
        .collect();
    let per_point = per_point.into_iter().collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&(f64, f64, bool, f64, f64)) -> f64| per_point.iter().map(f).fold(0.0, f64::max);
    report.push(Check::below("perpendicularity", max(|r| r.0), tol.perp));
    if setup.strict {
        report.push(Check::below("perpendicularity_strict", max(|r| r.1), tol.perp));
    }
    report.push(Check::flag("condition_ii", per_point.iter().all(|r| r.2)));
    report.push(Check::below("lemma_frame", max(|r| r.3), tol.perp));
    let thetas_l: Vec<f64> = per_point.iter().map(|r| r.4).collect();
    let l_stats = check_angle_constancy(&thetas_l)?;
    report.push(Check::below("angle_l", l_stats.stddev, tol.angle));

    // group phase
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.sampling.seed);
    let a_h = a_h_estimate(&setup.group, &volume, &mut rng)?;
    report.push(Check::below("a_h", a_h.max_abs(), A_H_TOL));
    let h = setup.group.random_element(&mut rng);
    let fh = f_h_modulus_check(&h, &volume, 10, 1.0, &mut rng)?;
    report.push(Check::below("f_h_modulus", fh.max_modulus_deviation, F_H_TOL));

    // sweep
    let samples = match sweep(&setup.group, &setup.k_basis, &points, ctx.config.h_grid()) {
        Ok(s) => s,
        Err(SlagError::ImmersionFailure { rank, expected, .. }) => {
            report.push(Check::below("immersion", (expected - rank) as f64, 0.5));
            return Ok(SweptData { points, samples: Vec::new(), thetas: Vec::new() });
        }
        Err(e) => return Err(e),
    };
    let min_rank = samples.iter().map(|s| frame_rank(s.frame.vectors())).min().unwrap_or(0);
    report.push(Check::flag("immersion", min_rank == n));
    report.counts.insert("swept_samples".into(), samples.len());

    let angles: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let iso = check_isotropic(potential, &s.frame)?;
            let theta = match lagrangian_angle(potential, &volume, &s.frame, tol.omega) {
                Ok(a) => a.theta_mod_pi,
                Err(SlagError::NotIsotropic(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            Ok((iso, theta))
        })
        .collect();
    let angles = angles.into_iter().collect::<Result<Vec<_>>>()?;
    let iso = angles.iter().map(|a| a.0).fold(0.0, f64::max);
    report.push(Check::below("isotropy", iso, tol.omega));
    let thetas: Vec<f64> = angles.iter().map(|a| a.1).collect();
    if thetas.iter().any(|t| t.is_nan()) {
        report.push(Check::flag("angle_constancy", false));
        return Ok(SweptData { points, samples, thetas });
    }
    let stats = check_angle_constancy(&thetas)?;
    report.push(Check::below("angle_constancy", stats.stddev, tol.angle));
    let phase = check_theorem_phase(l_stats.mean_mod_pi, &thetas, hk_dim, tol.phase)?;
    report.push(Check::below("phase", phase.distance, tol.phase));
    report.angle = AngleReport {
        mean_mod_pi: stats.mean_mod_pi,
        stddev: stats.stddev,
        predicted_shift: phase.predicted_shift,
        observed_shift: phase.observed_shift,
    };

    // |∇θ| at a few swept points
    let problem = setup.problem();
    let mut grad: f64 = 0.0;
    let stride = (samples.len() / GRADIENT_POINTS).max(1);
    for s in samples.iter().step_by(stride).take(GRADIENT_POINTS) {
        let base = points[s.base_index].coords.clone();
        let field = SweptField::new(potential, &problem, gens.clone(), s.h.clone(), base)?;
        grad = grad.max(mean_curvature_proxy(potential, &volume, &field, GRADIENT_STEP)?);
    }
    report.push(Check::below("angle_gradient", grad, GRADIENT_TOL));
    Ok(SweptData { points, samples, thetas })
}

/// Conormal example: the chart itself, no sweep.
fn certify_conormal(ctx: &Context, report: &mut VerificationReport) -> Result<SweptData> {
    let tol = ctx.config.tolerances;
    let potential = &ctx.potential;
    let volume = ctx.volume();
    let chart = ConormalSpec::l1();
    let group = SubgroupSpec::u1diag6();
    let count = ctx.config.v_count() * ctx.config.h_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.sampling.seed);
    let coords: Vec<Vec<f64>> = (0..count)
        .map(|_| chart.seed_box().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect();
    let rows: Vec<Result<(f64, f64, f64)>> = coords
        .par_iter()
        .map(|q| {
            let p = chart.point(q)?;
            let frame = RealFrame::new(szoke_map(&p), chart.tangent_frame(&p)?)?;
            let iso = check_isotropic(potential, &frame)?;
            let perp = check_perpendicular_strict(potential, &group, frame.base(), &frame)?;
            let theta = lagrangian_angle(potential, &volume, &frame, tol.omega)?.theta_mod_pi;
            Ok((iso, perp, theta))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    report.counts.insert("samples".into(), rows.len());
    report.push(Check::flag("lagrangian_dimension", chart.is_lagrangian_dim()));
    report.push(Check::below("isotropy", rows.iter().map(|r| r.0).fold(0.0, f64::max), tol.omega));
    report.push(Check::below("perpendicularity_strict", rows.iter().map(|r| r.1).fold(0.0, f64::max), tol.perp));
    let thetas: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let stats = check_angle_constancy(&thetas)?;
    report.push(Check::below("angle_constancy", stats.stddev, tol.angle));
    let mut grad: f64 = 0.0;
    for q in coords.iter().take(GRADIENT_POINTS) {
        let field = ChartField { chart: &chart, base: q.clone() };
        grad = grad.max(mean_curvature_proxy(potential, &volume, &field, GRADIENT_STEP)?);
    }
    report.push(Check::below("angle_gradient", grad, GRADIENT_TOL));
    report.angle = AngleReport { mean_mod_pi: stats.mean_mod_pi, stddev: stats.stddev, ..AngleReport::default() };
    Ok(SweptData { points: Vec::new(), samples: Vec::new(), thetas })
}

fn base_report(ctx: &Context) -> VerificationReport {
    let mut report = VerificationReport::new(ctx.config.example.id(), ctx.config_json());
    report.push(Check::below("calibration", ctx.calibration.spread, crate::quadric::CALIBRATION_TOL));
    report
}

/// Outcome of a verification: a report, or an empty level set.
pub enum VerifyOutcome {
    Report(VerificationReport, SweptData),
    Empty(VerificationReport),
}

impl VerifyOutcome {
    pub fn report(&self) -> &VerificationReport {
        match self {
            VerifyOutcome::Report(r, _) | VerifyOutcome::Empty(r) => r,
        }
    }
}

/// Full pipeline for the configured example and level.
pub fn run_verify(config: &RunConfig) -> Result<VerifyOutcome> {
    let ctx = Context::new(config)?;
    verify_with(&ctx)
}

pub fn verify_with(ctx: &Context) -> Result<VerifyOutcome> {
    let mut report = base_report(ctx);
    if ctx.config.example == Example::Conormal {
        let data = certify_conormal(ctx, &mut report)?;
        return Ok(VerifyOutcome::Report(report.finish(), data));
    }
    let setup = ExampleSetup::new(ctx.config.example, &ctx.config.levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.sampling.seed);
    let central = centrality_defect(&setup.group, &setup.target, 10, &mut rng);
    report.push(Check::below("centrality", central, 1e-10));
    let att = attainability(ctx, &setup)?;
    report.counts.insert("attainable".into(), att.attainable as usize);
    let Some((points, counts)) = level_points(ctx, &setup)? else {
        return Ok(VerifyOutcome::Empty(report.finish()));
    };
    report.counts.extend(counts_map(&counts));
    let data = certify(ctx, &setup, points, &mut report)?;
    Ok(VerifyOutcome::Report(report.finish(), data))
}

/// The so223 example at level zero, certified piece by piece.
pub fn run_verify_pieces(config: &RunConfig) -> Result<VerificationReport> {
    let ctx = Context::new(config)?;
    if ctx.config.example != Example::So223 {
        return Err(SlagError::Config("--pieces applies to the so223 example only".into()));
    }
    if ctx.config.levels.iter().any(|&c| c != 0.0) {
        return Err(SlagError::Config("--pieces requires c1 = c2 = 0".into()));
    }
    let setup = ExampleSetup::new(Example::So223, &[0.0, 0.0])?;
    let problem = setup.problem();
    let mut report = base_report(&ctx);
    for (k, piece) in hat_v00_piece_charts().iter().enumerate() {
        let mut sub = VerificationReport::new(&format!("so223/{}", piece.name()), serde_json::Value::Null);
        let (points, counts) =
            sample_piece(&ctx.potential, &problem, piece, ctx.config.v_count(), ctx.config.sampling.seed + k as u64)?;
        sub.counts.extend(counts_map(&counts));
        let level = points.iter().map(|p| p.level.max_abs()).fold(0.0, f64::max);
        sub.push(Check::below("level", level, 1e-10));
        certify(&ctx, &setup, points, &mut sub)?;
        report.pieces.push(sub.finish());
    }
    Ok(report.finish())
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub level: f64,
    pub attainable: bool,
    pub empty: bool,
    pub pass: bool,
    pub isotropy: f64,
    pub perpendicularity: f64,
    pub angle_stddev: f64,
    pub phase_distance: f64,
}

/// Parses `lo:hi:step` into the inclusive list of levels.
pub fn parse_level_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || SlagError::Config(format!("level range '{spec}' is not lo:hi:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (lo, hi, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

/// Reduced verification at each level; the first level component is scanned,
/// the rest are taken from the configuration.
pub fn run_scan(config: &RunConfig, levels: &[f64]) -> Result<Vec<ScanRow>> {
    let mut base = config.clone();
    if config.example == Example::Conormal {
        return Err(SlagError::Config("the conormal example has no level to scan".into()));
    }
    if base.levels.len() != base.example.level_len() {
        base.levels = vec![0.0; base.example.level_len()];
    }
    let ctx = Context::new(&base)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut cfg = ctx.config.clone();
        cfg.levels[0] = level;
        let sub = Context { config: cfg, potential: ctx.potential.clone(), calibration: ctx.calibration };
        let setup = ExampleSetup::new(sub.config.example, &sub.config.levels)?;
        let attainable = attainability(&sub, &setup)?.attainable;
        let outcome = match verify_with(&sub) {
            Err(SlagError::InsufficientSeeds { .. }) if !attainable => None,
            other => Some(other?),
        };
        let row = match outcome {
            Some(VerifyOutcome::Report(r, _)) => {
                let get = |name: &str| r.check(name).map_or(f64::NAN, |c| c.residual);
                ScanRow {
                    level,
                    attainable,
                    empty: false,
                    pass: r.pass,
                    isotropy: get("isotropy"),
                    perpendicularity: get("perpendicularity"),
                    angle_stddev: get("angle_constancy"),
                    phase_distance: get("phase"),
                }
            }
            _ => ScanRow {
                level,
                attainable,
                empty: true,
                pass: false,
                isotropy: f64::NAN,
                perpendicularity: f64::NAN,
                angle_stddev: f64::NAN,
                phase_distance: f64::NAN,
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// One exported swept sample.
#[derive(Clone, Debug)]
pub struct ExportRow {
    pub group_coords: Vec<f64>,
    pub chart_coords: Vec<f64>,
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
    pub mu: Vec<f64>,
    pub theta: f64,
}

#[derive(Clone, Debug)]
pub struct Export {
    pub example: Example,
    pub group_labels: Vec<String>,
    pub mu_labels: Vec<String>,
    pub rows: Vec<ExportRow>,
}

impl Export {
    pub fn header(&self) -> Vec<String> {
        let m = self.rows.first().map_or(0, |r| r.chart_coords.len());
        let dim = self.rows.first().map_or(0, |r| r.z_re.len());
        let mut h = vec!["example".to_string()];
        h.extend(self.group_labels.iter().map(|l| format!("h_{l}")));
        h.extend((0..m).map(|k| format!("q{k}")));
        h.extend((1..=dim).map(|k| format!("re_z{k}")));
        h.extend((1..=dim).map(|k| format!("im_z{k}")));
        h.extend(self.mu_labels.iter().map(|l| format!("mu_{l}")));
        h.push("theta".into());
        h
    }
}

/// Swept samples with coordinates, moment values and angles.
pub fn export_samples(config: &RunConfig) -> Result<Option<Export>> {
    let ctx = Context::new(config)?;
    let outcome = verify_with(&ctx)?;
    let VerifyOutcome::Report(_, data) = outcome else {
        return Ok(None);
    };
    let example = ctx.config.example;
    if example == Example::Conormal {
        return Err(SlagError::Config("the conormal example has no swept samples; use angle-series".into()));
    }
    let setup = ExampleSetup::new(example, &ctx.config.levels)?;
    let gen_idx = sweep_generators(&setup.group, &setup.k_basis);
    let group_labels = gen_idx.iter().map(|&g| setup.group.labels()[g].clone()).collect();
    let rows: Vec<Result<ExportRow>> = data
        .samples
        .par_iter()
        .zip(data.thetas.par_iter())
        .map(|(s, &theta)| {
            let z = s.ambient.z();
            Ok(ExportRow {
                group_coords: s.group_coords.clone(),
                chart_coords: data.points[s.base_index].coords.clone(),
                z_re: z.iter().map(|c| c.re).collect(),
                z_im: z.iter().map(|c| c.im).collect(),
                mu: moment_covector(&ctx.potential, &setup.group, &s.ambient)?.covector.components,
                theta,
            })
        })
        .collect();
    Ok(Some(Export { example, group_labels, mu_labels: setup.group.labels().to_vec(), rows: rows.into_iter().collect::<Result<_>>()? }))
}

/// `(index, θ mod π)` over the run's samples.
pub fn angle_series(config: &RunConfig) -> Result<Option<Vec<(usize, f64)>>> {
    match run_verify(config)? {
        VerifyOutcome::Report(_, data) => Ok(Some(data.thetas.into_iter().enumerate().collect())),
        VerifyOutcome::Empty(_) => Ok(None),
    }
}
