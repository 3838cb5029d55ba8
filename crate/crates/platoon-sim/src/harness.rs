//! Experiment harness.
//!
//! Sweeps (density, keep probability) x algorithm with seeded Monte Carlo
//! runs, pairs every simulated point with its closed-form counterpart, and
//! writes the CSV and JSON artifacts. Per-run randomness depends only on the
//! master seed and the run index, so execution order never matters and runs
//! are paired across keep probabilities and algorithms.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{CurvePoint, DrlAgent, DrlHyperParams, DrlOptions, RandomLeader};
use crate::analytic::{evaluate, AnalyticInputs};
use crate::error::{Error, Result};
use crate::nn::{QNetwork, QnnArchitecture};
use crate::scenario::{n_virtual_blocks, ScenarioConfig};
use crate::sps::World;

/// How a sweep point gets its collision probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Closed-form model, no simulation.
    Analytic,
    /// Leader redraws a uniform idle VRB every period.
    Random,
    /// Learning leader trained online.
    Drl,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Analytic => "analytic",
            Algorithm::Random => "random",
            Algorithm::Drl => "drl",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Algorithm::Analytic),
            "random" => Ok(Algorithm::Random),
            "drl" => Ok(Algorithm::Drl),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected analytic, random or drl)"
            ))),
        }
    }
}

/// One sweep point's aggregated outcome.
///
/// For simulated rows `p_c_ht = collisions / (periods * runs)` where
/// `periods` is the measured window per run: everything after warm-up for
/// the random baseline, the final half of the run for the learning leader.
/// Closed-form rows carry zero runs, periods and collisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rho: f64,
    pub p: f64,
    pub algorithm: Algorithm,
    pub runs: u32,
    pub periods: u32,
    pub collisions: u64,
    pub p_c_ht: f64,
    /// Binomial standard error of `p_c_ht`.
    pub stderr: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Rate over the whole post-warm-up run. Matches `p_c_ht` except for
    /// learning rows, where the headline window drops the exploration phase.
    pub full_run_p_c_ht: f64,
    /// Broadcast vehicles that found nothing idle and kept their VRB.
    pub world_saturation_keeps: u64,
    /// Leader periods with nothing idle (falls back to its previous VRB).
    pub leader_saturation_fallbacks: u64,
}

/// Sweep definition: the grid, the per-point budget and the shared scenario.
///
/// The embedded scenario supplies everything that is not swept (geometry,
/// slot layout, seed); its density, keep probability, run and period counts
/// are overridden per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub densities: Vec<f64>,
    pub keep_probs: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub runs_per_point: u32,
    pub periods_per_run: u32,
    pub scenario: ScenarioConfig,
    pub hyper: DrlHyperParams,
    pub options: DrlOptions,
    pub qnn: QnnArchitecture,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            densities: (1..=10).map(|i| f64::from(i) * 20.0).collect(),
            keep_probs: vec![0.9, 0.7, 0.5],
            algorithms: vec![Algorithm::Analytic, Algorithm::Random, Algorithm::Drl],
            runs_per_point: 50,
            periods_per_run: 10_000,
            scenario: ScenarioConfig::default(),
            hyper: DrlHyperParams::default(),
            options: DrlOptions::default(),
            qnn: QnnArchitecture::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.densities.is_empty() || self.keep_probs.is_empty() || self.algorithms.is_empty() {
            return Err(Error::Config(
                "densities, keep_probs and algorithms must be nonempty".into(),
            ));
        }
        if self.runs_per_point == 0 {
            return Err(Error::Config("runs_per_point must be positive".into()));
        }
        self.hyper.validate()?;
        self.qnn.validate()?;
        for &rho in &self.densities {
            for &p in &self.keep_probs {
                let cfg = self.point_scenario(rho, p);
                cfg.validate()?;
                AnalyticInputs::from_scenario(&cfg)?.validate()?;
            }
        }
        Ok(())
    }

    /// The full scenario for one grid point.
    pub fn point_scenario(&self, rho: f64, p: f64) -> ScenarioConfig {
        ScenarioConfig {
            density_rho: rho,
            keep_prob: p,
            runs_per_point: self.runs_per_point,
            periods_per_run: self.periods_per_run,
            ..self.scenario.clone()
        }
    }

    fn points(&self) -> Vec<(f64, f64, Algorithm)> {
        let mut v = Vec::new();
        for &rho in &self.densities {
            for &p in &self.keep_probs {
                for &algo in &self.algorithms {
                    v.push((rho, p, algo));
                }
            }
        }
        v
    }
}

/// Periods excluded from statistics at the start of every run, sized so SPS
/// occupancy settles before measurement begins.
pub fn warmup_periods(cfg: &ScenarioConfig) -> u32 {
    2 * cfg.sps_periods
}

/// (full window start, headline window start) for one run.
fn measure_starts(algorithm: Algorithm, periods: u32, warmup: u32) -> Result<(u32, u32)> {
    if periods <= warmup {
        return Err(Error::Config(format!(
            "periods_per_run {periods} leaves no measured periods after the {warmup}-period warm-up"
        )));
    }
    let head = match algorithm {
        // Drop the exploration phase: measure the final half of the run.
        Algorithm::Drl => warmup.max(periods / 2),
        _ => warmup,
    };
    Ok((warmup, head))
}

/// A simulated point paired with its closed-form value, plus the
/// learning-vs-baseline reduction when both were run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointComparison {
    pub rho: f64,
    pub p: f64,
    pub analytic_p_c_ht: f64,
    pub random_p_c_ht: Option<f64>,
    pub drl_p_c_ht: Option<f64>,
    pub drl_full_run_p_c_ht: Option<f64>,
    /// |simulated - analytic| / analytic for the random baseline.
    pub random_rel_error: Option<f64>,
    /// 1 - drl / random; positive when learning helps.
    pub reduction_ratio: Option<f64>,
}

/// A point that aborted, with the grid coordinates and the diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub rho: f64,
    pub p: f64,
    pub algorithm: Algorithm,
    pub error: String,
}

/// Everything a sweep produces; serialized verbatim as the JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub code_version: String,
    /// SHA-256 of the canonical spec serialization.
    pub config_hash: String,
    pub warmup_periods: u32,
    pub spec: SweepSpec,
    pub results: Vec<ExperimentResult>,
    pub comparisons: Vec<PointComparison>,
    pub failures: Vec<PointFailure>,
}

/// Extra artifacts a detailed point run can capture.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArtifactRequest {
    pub curves: bool,
    pub model: bool,
}

/// Training curve of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunCurve {
    pub run: u32,
    pub points: Vec<CurvePoint>,
}

/// Curves and the trained network from the last run, when requested.
#[derive(Debug, Default)]
pub struct PointArtifacts {
    pub curves: Vec<RunCurve>,
    pub model: Option<QNetwork>,
}

/// Runs one grid point. See [`run_point_detailed`].
pub fn run_point(spec: &SweepSpec, rho: f64, p: f64, algorithm: Algorithm) -> Result<ExperimentResult> {
    run_point_detailed(spec, rho, p, algorithm, ArtifactRequest::default()).map(|(r, _)| r)
}

/// Runs `runs_per_point` independent (placement, world, leader) runs at one
/// grid point and aggregates windowed collision counts, or evaluates the
/// closed form when `algorithm` is analytic.
pub fn run_point_detailed(
    spec: &SweepSpec,
    rho: f64,
    p: f64,
    algorithm: Algorithm,
    want: ArtifactRequest,
) -> Result<(ExperimentResult, PointArtifacts)> {
    let started = Instant::now();
    let cfg = spec.point_scenario(rho, p);
    cfg.validate()?;
    let seed = cfg.seed;
    let mut artifacts = PointArtifacts::default();

    if algorithm == Algorithm::Analytic {
        let out = evaluate(&AnalyticInputs::from_scenario(&cfg)?)?;
        let result = ExperimentResult {
            rho,
            p,
            algorithm,
            runs: 0,
            periods: 0,
            collisions: 0,
            p_c_ht: out.p_c_ht,
            stderr: 0.0,
            seed,
            wall_time_s: started.elapsed().as_secs_f64(),
            full_run_p_c_ht: out.p_c_ht,
            world_saturation_keeps: 0,
            leader_saturation_fallbacks: 0,
        };
        return Ok((result, artifacts));
    }

    let warmup = warmup_periods(&cfg);
    let periods = cfg.periods_per_run;
    let (full_start, head_start) = measure_starts(algorithm, periods, warmup)?;
    let n_r = n_virtual_blocks(&cfg)?;
    if algorithm == Algorithm::Drl && spec.qnn.actions != n_r {
        return Err(Error::Config(format!(
            "network has {} outputs but the scenario pool holds {n_r} VRBs",
            spec.qnn.actions
        )));
    }

    let mut head_collisions = 0u64;
    let mut full_collisions = 0u64;
    let mut world_sat = 0u64;
    let mut leader_sat = 0u64;
    let mut agent: Option<DrlAgent> = None;

    for run in 0..cfg.runs_per_point {
        let run_index = u64::from(run);
        let mut world = World::new(&cfg, run_index)?;
        let initial_vrb = world.pl_prev_vrb();

        match algorithm {
            Algorithm::Random => {
                let mut leader = RandomLeader::new(seed, run_index, initial_vrb);
                for period in 0..periods {
                    let outcome = leader.episode_step(&mut world)?;
                    if outcome.collided {
                        full_collisions += u64::from(period >= full_start);
                        head_collisions += u64::from(period >= head_start);
                    }
                }
                leader_sat += leader.saturation_fallbacks();
            }
            Algorithm::Drl => {
                match agent.as_mut() {
                    Some(a) if spec.options.persist_weights => {
                        a.reset_for_run(seed, run_index, initial_vrb);
                    }
                    _ => {
                        agent = Some(DrlAgent::new(
                            spec.qnn,
                            spec.hyper,
                            spec.options,
                            seed,
                            run_index,
                            initial_vrb,
                        )?);
                    }
                }
                let a = agent.as_mut().expect("agent just installed");
                if want.curves {
                    a.record_curve();
                }
                for period in 0..periods {
                    let outcome = a.episode_step(&mut world)?;
                    if outcome.collided {
                        full_collisions += u64::from(period >= full_start);
                        head_collisions += u64::from(period >= head_start);
                    }
                }
                leader_sat += a.saturation_fallbacks();
                if want.curves {
                    artifacts.curves.push(RunCurve {
                        run,
                        points: a.take_curve().unwrap_or_default(),
                    });
                }
            }
            Algorithm::Analytic => unreachable!("handled above"),
        }
        world_sat += world.saturation_keeps();
    }
    if want.model {
        artifacts.model = agent.as_ref().map(|a| a.net().clone());
    }

    let head_len = periods - head_start;
    let full_len = periods - full_start;
    let head_n = u64::from(head_len) * u64::from(cfg.runs_per_point);
    let full_n = u64::from(full_len) * u64::from(cfg.runs_per_point);
    let p_hat = head_collisions as f64 / head_n as f64;
    let result = ExperimentResult {
        rho,
        p,
        algorithm,
        runs: cfg.runs_per_point,
        periods: head_len,
        collisions: head_collisions,
        p_c_ht: p_hat,
        stderr: (p_hat * (1.0 - p_hat) / head_n as f64).sqrt(),
        seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        full_run_p_c_ht: full_collisions as f64 / full_n as f64,
        world_saturation_keeps: world_sat,
        leader_saturation_fallbacks: leader_sat,
    };
    Ok((result, artifacts))
}

/// Runs the whole grid. Individual point failures are collected in the
/// report rather than aborting the sweep; only an invalid spec errors.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    run_sweep_with(spec, |_| {})
}

/// [`run_sweep`] with a per-completed-point callback (progress reporting).
pub fn run_sweep_with<F>(spec: &SweepSpec, on_point: F) -> Result<SweepReport>
where
    F: Fn(&ExperimentResult) + Sync,
{
    spec.validate()?;
    let points = spec.points();
    let outcomes: Vec<_> = points
        .par_iter()
        .map(|&(rho, p, algo)| {
            let out = run_point(spec, rho, p, algo);
            if let Ok(r) = &out {
                on_point(r);
            }
            out.map_err(|e| PointFailure {
                rho,
                p,
                algorithm: algo,
                error: e.to_string(),
            })
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for out in outcomes {
        match out {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }

    let mut comparisons = Vec::new();
    for &rho in &spec.densities {
        for &p in &spec.keep_probs {
            let cfg = spec.point_scenario(rho, p);
            let analytic = evaluate(&AnalyticInputs::from_scenario(&cfg)?)?;
            let find = |algo: Algorithm| {
                results
                    .iter()
                    .find(|r| r.rho == rho && r.p == p && r.algorithm == algo)
            };
            let random = find(Algorithm::Random);
            let drl = find(Algorithm::Drl);
            comparisons.push(PointComparison {
                rho,
                p,
                analytic_p_c_ht: analytic.p_c_ht,
                random_p_c_ht: random.map(|r| r.p_c_ht),
                drl_p_c_ht: drl.map(|r| r.p_c_ht),
                drl_full_run_p_c_ht: drl.map(|r| r.full_run_p_c_ht),
                random_rel_error: random
                    .filter(|_| analytic.p_c_ht > 0.0)
                    .map(|r| (r.p_c_ht - analytic.p_c_ht).abs() / analytic.p_c_ht),
                reduction_ratio: match (random, drl) {
                    (Some(r), Some(d)) if r.p_c_ht > 0.0 => Some(1.0 - d.p_c_ht / r.p_c_ht),
                    _ => None,
                },
            });
        }
    }

    Ok(SweepReport {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(spec)?,
        warmup_periods: warmup_periods(&spec.scenario),
        spec: spec.clone(),
        results,
        comparisons,
        failures,
    })
}

/// SHA-256 over the spec's canonical JSON bytes.
pub fn config_hash(spec: &SweepSpec) -> Result<String> {
    let bytes = serde_json::to_vec(spec)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Fixed sweep CSV schema.
pub const RESULT_CSV_HEADER: &str =
    "rho,p,algorithm,runs,periods,collisions,p_c_ht,stderr,seed,wall_time_s";

fn result_csv_row(r: &ExperimentResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.rho, r.p, r.algorithm, r.runs, r.periods, r.collisions, r.p_c_ht, r.stderr, r.seed,
        r.wall_time_s
    )
}

/// Renders the per-result table.
pub fn results_csv(results: &[ExperimentResult]) -> String {
    let mut s = String::from(RESULT_CSV_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&result_csv_row(r));
        s.push('\n');
    }
    s
}

/// Paths written by [`emit_results`].
#[derive(Debug, Clone)]
pub struct EmittedPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes `results.csv` and `report.json` under `out_dir`.
pub fn emit_results(report: &SweepReport, out_dir: &Path) -> Result<EmittedPaths> {
    if report.results.is_empty() {
        return Err(Error::Config("no results to emit".into()));
    }
    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("results.csv");
    fs::write(&csv, results_csv(&report.results))?;
    let json = out_dir.join("report.json");
    let mut doc = serde_json::to_string_pretty(report)?;
    doc.push('\n');
    fs::write(&json, doc)?;
    Ok(EmittedPaths { csv, json })
}

/// Reads a sweep definition from either a bare spec file or a previously
/// emitted report (whose embedded spec is taken), so any sweep can be
/// replayed from its own artifact.
pub fn load_spec(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path)?;
    if let Ok(spec) = serde_json::from_str::<SweepSpec>(&text) {
        return Ok(spec);
    }
    let report: SweepReport = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{} is neither a sweep spec nor a sweep report: {e}",
            path.display()
        ))
    })?;
    Ok(report.spec)
}

/// Appends one run's training curve, writing the header on a fresh file.
pub fn append_curve_csv(path: &Path, run: u32, points: &[CurvePoint]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "run,period,loss,rolling_collision_rate")?;
    }
    for c in points {
        writeln!(f, "{run},{},{},{}", c.period, c.loss, c.rolling_collision_rate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_spec() -> SweepSpec {
        SweepSpec {
            densities: vec![20.0],
            keep_probs: vec![0.9],
            algorithms: vec![Algorithm::Random],
            runs_per_point: 2,
            periods_per_run: 60,
            ..SweepSpec::default()
        }
    }

    fn tiny_qnn() -> QnnArchitecture {
        QnnArchitecture {
            history_len: 6,
            channels: 2,
            kernel: 3,
            conv1_channels: 3,
            conv2_channels: 4,
            fc1_width: 12,
            fc2_width: 8,
            actions: 200,
        }
    }

    /// Everything except the timing field.
    fn stable_view(r: &ExperimentResult) -> (u64, u64, u32, u32, String) {
        (
            r.collisions,
            r.seed,
            r.runs,
            r.periods,
            format!("{}|{}|{}|{}|{}", r.rho, r.p, r.algorithm, r.p_c_ht, r.stderr),
        )
    }

    #[test]
    fn default_grid_matches_the_standard_sweep() {
        let spec = SweepSpec::default();
        assert_eq!(spec.densities.len(), 10);
        assert_eq!(spec.densities[0], 20.0);
        assert_eq!(spec.densities[9], 200.0);
        assert_eq!(spec.keep_probs, vec![0.9, 0.7, 0.5]);
        assert_eq!(spec.runs_per_point, 50);
        assert_eq!(spec.periods_per_run, 10_000);
        spec.validate().unwrap();
    }

    #[test]
    fn too_short_runs_are_a_configuration_error() {
        let spec = SweepSpec {
            periods_per_run: 20, // equal to the warm-up window
            ..desk_spec()
        };
        let err = run_point(&spec, 20.0, 0.9, Algorithm::Random).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        // 21 periods leave exactly one measured period.
        let spec = SweepSpec {
            periods_per_run: 21,
            ..desk_spec()
        };
        let r = run_point(&spec, 20.0, 0.9, Algorithm::Random).unwrap();
        assert_eq!(r.periods, 1);
    }

    #[test]
    fn headline_window_is_the_final_half_for_learning_rows() {
        assert_eq!(measure_starts(Algorithm::Random, 10_000, 20).unwrap(), (20, 20));
        assert_eq!(measure_starts(Algorithm::Drl, 10_000, 20).unwrap(), (20, 5_000));
        // Short runs: warm-up dominates the half-way point.
        assert_eq!(measure_starts(Algorithm::Drl, 30, 20).unwrap(), (20, 20));
    }

    #[test]
    fn repeated_points_are_identical_apart_from_timing() {
        let spec = desk_spec();
        let a = run_point(&spec, 20.0, 0.9, Algorithm::Random).unwrap();
        let b = run_point(&spec, 20.0, 0.9, Algorithm::Random).unwrap();
        assert_eq!(stable_view(&a), stable_view(&b));
        assert_eq!(
            a.p_c_ht,
            a.collisions as f64 / (f64::from(a.periods) * f64::from(a.runs))
        );
    }

    #[test]
    fn point_order_does_not_change_results() {
        let base = SweepSpec {
            densities: vec![20.0, 40.0],
            periods_per_run: 50,
            runs_per_point: 1,
            ..desk_spec()
        };
        let flipped = SweepSpec {
            densities: vec![40.0, 20.0],
            ..base.clone()
        };
        let a = run_sweep(&base).unwrap();
        let b = run_sweep(&flipped).unwrap();
        for r in &a.results {
            let twin = b
                .results
                .iter()
                .find(|x| x.rho == r.rho && x.p == r.p && x.algorithm == r.algorithm)
                .unwrap();
            assert_eq!(stable_view(r), stable_view(twin));
        }
    }

    #[test]
    fn closed_form_rows_reuse_the_model_code_path() {
        let spec = SweepSpec {
            densities: vec![20.0, 200.0],
            keep_probs: vec![0.9, 0.5],
            algorithms: vec![Algorithm::Analytic],
            ..desk_spec()
        };
        let report = run_sweep(&spec).unwrap();
        assert_eq!(report.results.len(), 4);
        for r in &report.results {
            let cfg = spec.point_scenario(r.rho, r.p);
            let direct = evaluate(&AnalyticInputs::from_scenario(&cfg).unwrap()).unwrap();
            assert_eq!(r.p_c_ht, direct.p_c_ht);
            assert_eq!(r.runs, 0);
        }
        let c = &report.comparisons[0];
        assert_eq!(c.analytic_p_c_ht, report.results[0].p_c_ht);
        assert!(c.random_p_c_ht.is_none() && c.reduction_ratio.is_none());
    }

    #[test]
    fn failed_points_are_recorded_and_the_sweep_continues() {
        let spec = SweepSpec {
            algorithms: vec![Algorithm::Random, Algorithm::Drl],
            periods_per_run: 50,
            runs_per_point: 1,
            qnn: QnnArchitecture {
                actions: 100, // disagrees with the 200-VRB pool
                ..tiny_qnn()
            },
            ..desk_spec()
        };
        let report = run_sweep(&spec).unwrap();
        assert_eq!(report.results.len(), 1);
        assert_eq!(report.results[0].algorithm, Algorithm::Random);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].algorithm, Algorithm::Drl);
        assert!(report.failures[0].error.contains("outputs"));
        assert!(report.comparisons[0].reduction_ratio.is_none());
    }

    #[test]
    fn learning_point_runs_end_to_end_with_artifacts() {
        let spec = SweepSpec {
            algorithms: vec![Algorithm::Drl],
            periods_per_run: 80,
            runs_per_point: 2,
            qnn: tiny_qnn(),
            ..desk_spec()
        };
        let (r, artifacts) = run_point_detailed(
            &spec,
            20.0,
            0.9,
            Algorithm::Drl,
            ArtifactRequest {
                curves: true,
                model: true,
            },
        )
        .unwrap();
        assert_eq!(r.periods, 40); // final half of 80
        assert!((0.0..=1.0).contains(&r.p_c_ht));
        assert!((0.0..=1.0).contains(&r.full_run_p_c_ht));
        assert_eq!(artifacts.curves.len(), 2);
        for c in &artifacts.curves {
            assert_eq!(c.points.len(), 80);
            assert!(c.points.iter().all(|p| p.loss.is_finite()));
        }
        let net = artifacts.model.expect("trained network requested");
        assert_eq!(net.arch().actions, 200);
    }

    #[test]
    fn csv_schema_is_fixed_and_report_round_trips() {
        let spec = SweepSpec {
            algorithms: vec![Algorithm::Analytic, Algorithm::Random],
            periods_per_run: 50,
            runs_per_point: 1,
            ..desk_spec()
        };
        let report = run_sweep(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_results(&report, dir.path()).unwrap();

        let csv = fs::read_to_string(&paths.csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULT_CSV_HEADER);
        assert_eq!(lines.count(), report.results.len());

        let parsed: SweepReport =
            serde_json::from_str(&fs::read_to_string(&paths.json).unwrap()).unwrap();
        assert_eq!(parsed, report);

        // A report file works as the sweep definition for a replay.
        let replayed = load_spec(&paths.json).unwrap();
        assert_eq!(replayed, spec);
    }

    #[test]
    fn curve_csv_appends_runs_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let points = vec![CurvePoint {
            period: 0,
            loss: 0.5,
            rolling_collision_rate: 1.0,
        }];
        append_curve_csv(&path, 0, &points).unwrap();
        append_curve_csv(&path, 1, &points).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "run,period,loss,rolling_collision_rate");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,") && lines[2].starts_with("1,"));
    }
}
