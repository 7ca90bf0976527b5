//! `hmrl`: case generation, training, benchmarking, holdout validation and
//! plot data for parallel PPO history matching.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hmrl_core::case::{build_case, CaseFile, Tolerance};
use hmrl_core::harness::bench::{run_bench, BenchSpec};
use hmrl_core::harness::plotdata::{write_plotdata, DEFAULT_WINDOW};
use hmrl_core::harness::validate::{validate_solutions, write_report};
use hmrl_core::harness::Preset;
use hmrl_core::orchestrator::{default_base, read_solutions, Checkpoint, RunConfig, Trainer, Workspace};
use hmrl_core::parallel::ExecMode;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "hmrl", version, about = "Parallel PPO history matching on synthetic reservoir cases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a case file from a preset
    MakeCase(MakeCaseArgs),
    /// Train an agent on a case
    Train(TrainArgs),
    /// Time-to-first-solution sweep over environment counts
    Bench(BenchArgs),
    /// Forecast archived solutions over the holdout window
    Validate(ValidateArgs),
    /// Write plot-ready CSVs for a run directory
    Plotdata(PlotdataArgs),
}

#[derive(Args, Debug)]
struct MakeCaseArgs {
    #[arg(long, default_value = "spe1-analog")]
    preset: Preset,
    /// output case file
    #[arg(long)]
    out: PathBuf,
    /// noise std in mD [default: preset value]
    #[arg(long)]
    amplitude: Option<f64>,
    /// noise seed [default: preset value]
    #[arg(long)]
    seed: Option<u64>,
    /// report steps kept back for validation [default: preset value]
    #[arg(long)]
    holdout_steps: Option<usize>,
    /// absolute objective tolerance [default: preset value]
    #[arg(long, conflicts_with = "relative_tolerance")]
    tolerance: Option<f64>,
    /// tolerance as a fraction of the initial objective
    #[arg(long)]
    relative_tolerance: Option<f64>,
}

/// Options shared by `train` and `bench`. Unset values come from the preset
/// matching the case name, or the spe1-analog preset otherwise.
#[derive(Args, Debug, Clone)]
struct TrainingOpts {
    /// training defaults [default: by case name, else spe1-analog]
    #[arg(long)]
    preset: Option<Preset>,
    /// samples per PPO update [default: preset, 32 for spe1-analog]
    #[arg(long)]
    batch: Option<usize>,
    /// total environment steps [default: preset, 10000 for spe1-analog]
    #[arg(long)]
    budget: Option<u64>,
    /// master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adam step size [default: preset]
    #[arg(long)]
    lr: Option<f64>,
    /// hidden units per layer [default: preset]
    #[arg(long)]
    hidden: Option<usize>,
    /// run everything on the calling thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// case file
    #[arg(long, required_unless_present = "resume")]
    case: Option<PathBuf>,
    /// concurrent environments [default: preset, 1 for spe1-analog]
    #[arg(long)]
    envs: Option<usize>,
    #[command(flatten)]
    opts: TrainingOpts,
    /// continue from a checkpoint file
    #[arg(long, conflicts_with = "case")]
    resume: Option<PathBuf>,
    /// workspace base directory [default: $HMRL_WORKSPACE or ./runs]
    #[arg(long)]
    out: Option<PathBuf>,
    /// iterations between checkpoints, 0 for the final one only
    #[arg(long, default_value_t = 10)]
    checkpoint_every: u64,
    /// stop once this many solutions are archived
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    case: PathBuf,
    /// environment counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    envs: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[command(flatten)]
    opts: TrainingOpts,
    /// output directory for bench.csv and bench_runs.csv
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// run directory
    run: PathBuf,
    /// case file [default: the one recorded in config.snapshot]
    #[arg(long)]
    case: Option<PathBuf>,
    /// report file [default: <run>/validation.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotdataArgs {
    /// run directory
    run: PathBuf,
    /// case file [default: the one recorded in config.snapshot]
    #[arg(long)]
    case: Option<PathBuf>,
    /// bench.csv to pass through as scalability.csv
    #[arg(long)]
    bench: Option<PathBuf>,
    /// moving-average window in iterations
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// output directory [default: <run>/plotdata]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors that map to the usage exit code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::MakeCase(a) => make_case(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
        Command::Validate(a) => validate(a),
        Command::Plotdata(a) => plotdata(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn make_case(a: MakeCaseArgs) -> Result<()> {
    let mut recipe = a.preset.recipe()?;
    if let Some(x) = a.amplitude {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(usage("--amplitude must be a finite value >= 0"));
        }
        recipe.noise.amplitude = x;
    }
    if let Some(s) = a.seed {
        recipe.noise.seed = s;
    }
    if let Some(h) = a.holdout_steps {
        recipe.holdout_steps = h;
    }
    match (a.tolerance, a.relative_tolerance) {
        (Some(e), _) if !(e > 0.0) => return Err(usage("--tolerance must be positive")),
        (_, Some(r)) if !(r > 0.0 && r < 1.0) => return Err(usage("--relative-tolerance must lie in (0, 1)")),
        (Some(e), _) => recipe.tolerance = Tolerance::Absolute(e),
        (_, Some(r)) => recipe.tolerance = Tolerance::Relative(r),
        _ => {}
    }
    if recipe.noise.amplitude == 0.0 {
        eprintln!("warning: noise amplitude is 0, the case is already solved at the start vector");
    }
    let case = build_case(&recipe)?;
    case.write(&a.out)?;
    println!("case        {}", a.out.display());
    println!("grid        {}x{}x{} ({} parameters)", case.grid.nx, case.grid.ny, case.grid.nz, case.grid.n_params());
    println!("F0          {}", case.initial_objective);
    println!("epsilon     {}", case.objective.epsilon);
    println!(
        "holdout     {} steps",
        case.holdout.as_ref().map_or(0, |h| h.n_steps)
    );
    Ok(())
}

fn read_case(path: &Path) -> Result<CaseFile> {
    CaseFile::read(path).with_context(|| format!("reading case {}", path.display()))
}

fn base_config(opts: &TrainingOpts, case: &CaseFile) -> RunConfig {
    let preset = opts
        .preset
        .or_else(|| case.name.parse().ok())
        .unwrap_or(Preset::Spe1Analog);
    let mut cfg = preset.run_config();
    if let Some(b) = opts.batch {
        cfg.batch_size = b;
    }
    if let Some(b) = opts.budget {
        cfg.budget = b;
    }
    if let Some(lr) = opts.lr {
        cfg.ppo.learning_rate = lr;
    }
    if let Some(h) = opts.hidden {
        cfg.ppo.hidden = h;
    }
    cfg.seed = opts.seed;
    if opts.sequential {
        cfg.exec = ExecMode::Sequential;
    }
    cfg
}

fn check_config(cfg: &RunConfig) -> Result<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn workspace_base(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(default_base)
}

fn train(a: TrainArgs) -> Result<()> {
    let base = workspace_base(a.out);
    let mut trainer = if let Some(ckpt) = &a.resume {
        let ck = Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
        let mut t = Trainer::resume(&ck)?;
        if let Some(b) = a.opts.budget {
            t.set_budget(b);
        }
        if a.stop_after.is_some() {
            t.set_stop_after_solutions(a.stop_after);
        }
        println!(
            "resumed     iteration {} step {} from {}",
            t.iteration(),
            t.global_step(),
            ckpt.display()
        );
        t
    } else {
        let path = a.case.as_ref().expect("clap requires --case without --resume");
        let case = read_case(path)?;
        let mut cfg = base_config(&a.opts, &case);
        if let Some(n) = a.envs {
            cfg.n_envs = n;
        }
        cfg.case_path = Some(std::fs::canonicalize(path).unwrap_or_else(|_| path.clone()));
        cfg.checkpoint_every = a.checkpoint_every;
        cfg.stop_after_solutions = a.stop_after;
        cfg.workspace_root = Some(base.clone());
        check_config(&cfg)?;
        Trainer::new(cfg, case)?
    };
    trainer.attach_workspace(Workspace::create(&base)?)?;
    let cfg = trainer.config();
    println!(
        "run         {}",
        trainer.workspace().map(|w| w.root().display().to_string()).unwrap_or_default()
    );
    println!(
        "config      envs {} batch {} budget {} seed {} ({} iterations)",
        cfg.n_envs,
        cfg.batch_size,
        cfg.budget,
        cfg.seed,
        cfg.iterations_for_budget()
    );
    let report = trainer.run()?;
    println!("iterations  {}", report.iterations);
    println!("steps       {}", report.global_step);
    println!("simulations {} ({} failed)", report.sims_total, report.failures);
    println!("solutions   {}", report.solutions.len());
    if let Some(s) = report.first_solution_step {
        println!("first found at step {s}");
    }
    if let Some(last) = report.history.last() {
        println!(
            "last        mean reward {:.4e} policy loss {:.4e} value loss {:.4e} clip {:.3}",
            last.mean_reward, last.policy_loss, last.value_loss, last.clip_fraction
        );
    }
    println!("wall        {:.1} s", report.wall_seconds);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let case = read_case(&a.case)?;
    let cfg = base_config(&a.opts, &case);
    let spec = BenchSpec {
        env_counts: a.envs,
        repeats: a.repeats,
        seed: a.opts.seed,
        base: cfg,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    check_config(&RunConfig {
        n_envs: *spec.env_counts.last().unwrap_or(&1),
        ..spec.base.clone()
    })?;
    let table = run_bench(&case, &spec, |r| {
        let outcome = match r.first_solution_step {
            Some(s) => format!("solved at step {s}"),
            None => "censored".to_string(),
        };
        eprintln!(
            "n_envs {:>3} repeat {:>2}: {:.2} s, {} sims, {outcome}",
            r.n_envs, r.repeat, r.seconds, r.sims
        );
    })?;
    for row in &table.rows {
        if row.censored > 0 {
            eprintln!(
                "warning: {} of {} runs at n_envs {} found no solution within the budget and are excluded",
                row.censored,
                row.censored + row.completed,
                row.n_envs
            );
        }
    }
    table.write(&a.out)?;
    print!("{}", table.to_csv());
    Ok(())
}

/// Case file named on the command line, else the one recorded in the run's
/// config snapshot.
fn run_case(run: &Path, explicit: Option<&PathBuf>) -> Result<CaseFile> {
    if let Some(p) = explicit {
        return read_case(p);
    }
    let ws = Workspace::open(run)?;
    let snap_path = ws.config_path();
    let text = std::fs::read_to_string(&snap_path)
        .with_context(|| format!("reading {}", snap_path.display()))?;
    let snap: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", snap_path.display()))?;
    match snap["config"]["case_path"].as_str() {
        Some(p) => read_case(Path::new(p)),
        None => Err(usage("run records no case path; pass --case")),
    }
}

fn validate(a: ValidateArgs) -> Result<()> {
    let ws = Workspace::open(&a.run)?;
    let case = run_case(&a.run, a.case.as_ref())?;
    if case.holdout.is_none() {
        bail!("case {:?} has no holdout window; rebuild it with --holdout-steps", case.name);
    }
    let solutions = read_solutions(&ws.solutions_dir())?;
    if solutions.is_empty() {
        bail!("run {} has no archived solutions to validate", a.run.display());
    }
    let model = case.simulator();
    let report = validate_solutions(&case, &model, &solutions)?;
    let out = a.out.unwrap_or_else(|| ws.root().join("validation.csv"));
    write_report(&report, &out)?;
    let beat = report.rows.iter().filter(|r| r.beats_start()).count();
    println!("report      {}", out.display());
    println!("start       holdout mismatch {:.6e}", report.start.holdout_mismatch);
    println!("solutions   {} ({beat} beat the start on the holdout window)", report.rows.len());
    Ok(())
}

fn plotdata(a: PlotdataArgs) -> Result<()> {
    let ws = Workspace::open(&a.run)?;
    if !ws.metrics_path().is_file() {
        bail!("run {} has no metrics.csv", a.run.display());
    }
    if a.window == 0 {
        return Err(usage("--window must be >= 1"));
    }
    let case = run_case(&a.run, a.case.as_ref())?;
    let out = a.out.unwrap_or_else(|| ws.root().join("plotdata"));
    let model = case.simulator();
    for p in write_plotdata(&case, &model, &a.run, &out, a.window, a.bench.as_deref())? {
        println!("{}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
