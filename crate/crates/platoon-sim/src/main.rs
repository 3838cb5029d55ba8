//! Command line front end: closed-form tables, single-point simulation,
//! full sweeps and sensing-matrix export.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use platoon_sim::agents::{DrlHyperParams, DrlOptions, ReplaySampling};
use platoon_sim::analytic::{evaluate, AnalyticInputs};
use platoon_sim::harness::{
    self, Algorithm, ArtifactRequest, PointComparison, SweepReport, SweepSpec,
};
use platoon_sim::scenario::{n_virtual_blocks, ScenarioConfig};
use platoon_sim::sps::World;
use platoon_sim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "platoon-sim",
    version,
    about = "Sidelink platoon resource allocation: closed-form model, SPS Monte Carlo and a learning leader"
)]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form collision probabilities over the grid.
    Analytic(AnalyticArgs),
    /// Monte Carlo runs at a single (density, keep probability) point.
    Simulate(SimulateArgs),
    /// Full density x keep-probability x algorithm sweep.
    Sweep(SweepArgs),
    /// Leader and tail sensing matrices from one run.
    ExportSensing(ExportSensingArgs),
}

/// Scenario source plus the per-field overrides shared by the subcommands.
#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; fields mirror the configuration structure.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vehicle density in vehicles per km.
    #[arg(long)]
    rho: Option<f64>,
    /// Resource keeping probability.
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Transmission periods per run.
    #[arg(long)]
    periods: Option<u32>,
    /// Independent runs per point.
    #[arg(long)]
    runs: Option<u32>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => ScenarioConfig::default(),
        };
        if let Some(rho) = self.rho {
            cfg.density_rho = rho;
        }
        if let Some(p) = self.keep_prob {
            cfg.keep_prob = p;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(periods) = self.periods {
            cfg.periods_per_run = periods;
        }
        if let Some(runs) = self.runs {
            cfg.runs_per_point = runs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Densities to tabulate (comma separated; default 20..200 step 20).
    #[arg(long, value_delimiter = ',')]
    densities: Vec<f64>,
    /// Keep probabilities to tabulate (default 0.9,0.7,0.5).
    #[arg(long, value_delimiter = ',')]
    keep_probs: Vec<f64>,
    /// Write analytic.csv here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// random or drl.
    #[arg(long)]
    algo: Algorithm,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write results, report, training curves and the trained model here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Restrict the learning target's bootstrap max to idle VRBs.
    #[arg(long)]
    masked_td_target: bool,
    /// Carry learned weights across the runs of the point.
    #[arg(long)]
    persist_weights: bool,
    /// Training batch source: latest (the just-stored transition) or
    /// uniform (with-replacement draws from the whole memory).
    #[arg(long, default_value_t = ReplaySampling::default())]
    replay_sampling: ReplaySampling,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON, or a previously emitted report to replay.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Densities to sweep (comma separated), overriding the spec.
    #[arg(long, value_delimiter = ',')]
    densities: Vec<f64>,
    /// Keep probabilities to sweep, overriding the spec.
    #[arg(long, value_delimiter = ',')]
    keep_probs: Vec<f64>,
    /// Algorithms to run (comma separated: analytic,random,drl).
    #[arg(long, value_delimiter = ',')]
    algos: Vec<Algorithm>,
    #[arg(long, default_value = "sweep-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportSensingArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Which run's placement and streams to use.
    #[arg(long, default_value_t = 0)]
    run: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Analytic(args) => cmd_analytic(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportSensing(args) => cmd_export_sensing(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn default_densities() -> Vec<f64> {
    (1..=10).map(|i| f64::from(i) * 20.0).collect()
}

fn cmd_analytic(args: AnalyticArgs) -> Result<ExitCode> {
    let base = args.scenario.resolve()?;
    let densities = if args.densities.is_empty() {
        default_densities()
    } else {
        args.densities
    };
    let keep_probs = if args.keep_probs.is_empty() {
        vec![0.9, 0.7, 0.5]
    } else {
        args.keep_probs
    };

    let mut table = String::from("rho,p,N_a,P_c_rs,P_one_ht,P_c_ht\n");
    for &rho in &densities {
        for &p in &keep_probs {
            let cfg = ScenarioConfig {
                density_rho: rho,
                keep_prob: p,
                ..base.clone()
            };
            let out = evaluate(&AnalyticInputs::from_scenario(&cfg)?)?;
            table.push_str(&format!(
                "{rho},{p},{},{},{},{}\n",
                out.n_a, out.p_c_rs, out.p_one_ht, out.p_c_ht
            ));
        }
    }
    match args.out_dir {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            let path = dir.join("analytic.csv");
            fs::write(&path, table)?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(ExitCode::SUCCESS)
}

/// A single-point spec built from a resolved scenario; the network output
/// width follows the scenario's VRB pool.
fn point_spec(cfg: &ScenarioConfig, algo: Algorithm, options: DrlOptions) -> Result<SweepSpec> {
    let mut spec = SweepSpec {
        densities: vec![cfg.density_rho],
        keep_probs: vec![cfg.keep_prob],
        algorithms: vec![algo],
        runs_per_point: cfg.runs_per_point,
        periods_per_run: cfg.periods_per_run,
        scenario: cfg.clone(),
        hyper: DrlHyperParams::default(),
        options,
        ..SweepSpec::default()
    };
    spec.qnn.actions = n_virtual_blocks(cfg)?;
    Ok(spec)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let cfg = args.scenario.resolve()?;
    let options = DrlOptions {
        masked_td_target: args.masked_td_target,
        persist_weights: args.persist_weights,
        replay_sampling: args.replay_sampling,
    };
    let spec = point_spec(&cfg, args.algo, options)?;
    let want = ArtifactRequest {
        curves: args.out_dir.is_some() && args.algo == Algorithm::Drl,
        model: args.out_dir.is_some() && args.algo == Algorithm::Drl,
    };
    let (result, artifacts) =
        harness::run_point_detailed(&spec, cfg.density_rho, cfg.keep_prob, args.algo, want)?;

    let analytic_cfg = AnalyticInputs::from_scenario(&cfg)?;
    let analytic = evaluate(&analytic_cfg)?;
    println!(
        "rho={} p={} algorithm={} runs={} measured_periods={} collisions={}",
        result.rho, result.p, result.algorithm, result.runs, result.periods, result.collisions
    );
    println!(
        "p_c_ht={:.6} stderr={:.6} full_run={:.6} analytic={:.6}",
        result.p_c_ht, result.stderr, result.full_run_p_c_ht, analytic.p_c_ht
    );

    if let Some(dir) = args.out_dir {
        fs::create_dir_all(&dir)?;
        let report = single_point_report(&spec, &result)?;
        let paths = harness::emit_results(&report, &dir)?;
        println!("wrote {}", paths.csv.display());
        println!("wrote {}", paths.json.display());
        if !artifacts.curves.is_empty() {
            let curve_path = dir.join("training_curve.csv");
            for c in &artifacts.curves {
                harness::append_curve_csv(&curve_path, c.run, &c.points)?;
            }
            println!("wrote {}", curve_path.display());
        }
        if let Some(net) = &artifacts.model {
            let params = dir.join("model_params.bin");
            let sidecar = dir.join("model_sidecar.json");
            net.save(
                &params,
                &sidecar,
                json!({
                    "scenario": cfg,
                    "hyper": spec.hyper,
                    "options": spec.options,
                    "p_c_ht": result.p_c_ht,
                }),
            )?;
            println!("wrote {}", params.display());
            println!("wrote {}", sidecar.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Wraps one point's result in a full report so `simulate` emits the same
/// artifacts (and replays the same way) as `sweep`.
fn single_point_report(spec: &SweepSpec, result: &harness::ExperimentResult) -> Result<SweepReport> {
    let analytic_row = harness::run_point(spec, result.rho, result.p, Algorithm::Analytic)?;
    let analytic = analytic_row.p_c_ht;
    let mut cmp = PointComparison {
        rho: result.rho,
        p: result.p,
        analytic_p_c_ht: analytic,
        random_p_c_ht: None,
        drl_p_c_ht: None,
        drl_full_run_p_c_ht: None,
        random_rel_error: None,
        reduction_ratio: None,
    };
    match result.algorithm {
        Algorithm::Random => {
            cmp.random_p_c_ht = Some(result.p_c_ht);
            cmp.random_rel_error =
                (analytic > 0.0).then(|| (result.p_c_ht - analytic).abs() / analytic);
        }
        Algorithm::Drl => {
            cmp.drl_p_c_ht = Some(result.p_c_ht);
            cmp.drl_full_run_p_c_ht = Some(result.full_run_p_c_ht);
        }
        Algorithm::Analytic => {}
    }
    Ok(SweepReport {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: harness::config_hash(spec)?,
        warmup_periods: harness::warmup_periods(&spec.scenario),
        spec: spec.clone(),
        results: vec![analytic_row, result.clone()],
        comparisons: vec![cmp],
        failures: Vec::new(),
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(path) => harness::load_spec(path)?,
        None => SweepSpec::default(),
    };
    if args.scenario.config.is_some() {
        spec.scenario = args.scenario.resolve()?;
    } else {
        if let Some(seed) = args.scenario.seed {
            spec.scenario.seed = seed;
        }
        if let Some(periods) = args.scenario.periods {
            spec.periods_per_run = periods;
        }
        if let Some(runs) = args.scenario.runs {
            spec.runs_per_point = runs;
        }
        if let Some(rho) = args.scenario.rho {
            spec.densities = vec![rho];
        }
        if let Some(p) = args.scenario.keep_prob {
            spec.keep_probs = vec![p];
        }
    }
    if !args.densities.is_empty() {
        spec.densities = args.densities.clone();
    }
    if !args.keep_probs.is_empty() {
        spec.keep_probs = args.keep_probs.clone();
    }
    if !args.algos.is_empty() {
        spec.algorithms = args.algos.clone();
    }

    let total = spec.densities.len() * spec.keep_probs.len() * spec.algorithms.len();
    eprintln!("sweeping {total} points");
    let report = harness::run_sweep_with(&spec, |r| {
        eprintln!(
            "done rho={} p={} {}: p_c_ht={:.6} ({:.1}s)",
            r.rho, r.p, r.algorithm, r.p_c_ht, r.wall_time_s
        );
    })?;

    print_comparison(&report);
    let paths = harness::emit_results(&report, &args.out_dir)?;
    println!("wrote {}", paths.csv.display());
    println!("wrote {}", paths.json.display());

    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &report.failures {
            eprintln!("failed rho={} p={} {}: {}", f.rho, f.p, f.algorithm, f.error);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn print_comparison(report: &SweepReport) {
    println!("rho      p    analytic    random      rel_err     drl         reduction");
    for c in &report.comparisons {
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:<12.6}"),
            None => format!("{:<12}", "-"),
        };
        println!(
            "{:<8} {:<4} {:<11.6} {}{}{}{}",
            c.rho,
            c.p,
            c.analytic_p_c_ht,
            opt(c.random_p_c_ht),
            opt(c.random_rel_error),
            opt(c.drl_p_c_ht),
            opt(c.reduction_ratio),
        );
    }
}

fn cmd_export_sensing(args: ExportSensingArgs) -> Result<ExitCode> {
    let cfg = args.scenario.resolve()?;
    let mut world = World::new(&cfg, args.run)?;
    world.record_sensing();
    let mut leader = platoon_sim::agents::RandomLeader::new(cfg.seed, args.run, world.pl_prev_vrb());
    for _ in 0..cfg.periods_per_run {
        leader.episode_step(&mut world)?;
    }
    let (pl, tail) = world
        .take_sensing()
        .ok_or_else(|| Error::Config("sensing recording was not enabled".into()))?;

    fs::create_dir_all(&args.out_dir)?;
    for (matrix, name) in [(pl, "pl_sensing.csv"), (tail, "tail_sensing.csv")] {
        let path = args.out_dir.join(name);
        let mut file = fs::File::create(&path)?;
        matrix.write_csv(&mut file)?;
        file.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
