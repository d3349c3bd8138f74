use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use collapse_lab::classifier::Classifier;
use collapse_lab::datasets::{read_gld1, write_gld1};
use collapse_lab::diffusion::{sample, LabelPlan, SamplerKind};
use collapse_lab::experiment::{resume_with, run_experiment_with, ExperimentConfig, RunOptions};
use collapse_lab::metrics::{format_sig6, Evaluator, FeatureSpace};
use collapse_lab::{DiffusionModel, Error, Result};

mod inspect;
mod plot;

#[derive(Parser)]
#[command(
    name = "collapse-lab",
    version,
    about = "Train diffusion models on their own samples, generation after generation, and measure the decay"
)]
struct Cli {
    /// Worker threads for data-parallel loops (0 = one per core).
    #[arg(long, global = true, env = "COLLAPSE_LAB_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a generational experiment described by a JSON config.
    Run(RunArgs),
    /// Compare a generated GLD1 file against a real one.
    Metrics(MetricsArgs),
    /// Draw samples from a diffusion model snapshot into a GLD1 file.
    Sample(SampleArgs),
    /// Turn metrics.csv into SVG line charts and a tidy plots.csv.
    Plot(PlotArgs),
    /// Print the header of a GLD1 or CLNN file.
    Inspect(InspectArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat JSON config with dotted keys; omitted keys take defaults.
    #[arg(required_unless_present = "resume", conflicts_with = "resume")]
    config: Option<PathBuf>,

    /// Continue the run stored in this directory.
    #[arg(long, value_name = "DIR")]
    resume: Option<PathBuf>,

    /// Number of generations (overrides loop.generations).
    #[arg(long)]
    generations: Option<usize>,

    /// Output directory (overrides output_dir).
    #[arg(long, value_name = "DIR", conflicts_with = "resume")]
    output_dir: Option<PathBuf>,

    /// Config override as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", conflicts_with = "resume")]
    overrides: Vec<String>,

    /// Stop after this generation completes, leaving a resumable run.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(clap::Args)]
struct MetricsArgs {
    /// Reference dataset (GLD1).
    real: PathBuf,
    /// Dataset to score (GLD1).
    generated: PathBuf,
    /// Neighbourhood size for the manifold metrics.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Classifier snapshot (CLSF): supplies features and fidelity metrics.
    #[arg(long, value_name = "SNAPSHOT")]
    classifier: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Ddpm,
    Ddim,
}

#[derive(clap::Args)]
struct SampleArgs {
    /// Diffusion model snapshot (DIFF).
    model: PathBuf,
    /// Number of samples.
    #[arg(short, long)]
    n: usize,
    #[arg(long, value_enum, default_value = "ddpm")]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 50)]
    ddim_steps: usize,
    /// Classifier-free guidance scale; conditions samples on balanced labels.
    #[arg(long)]
    guidance: Option<f64>,
    /// Condition every sample on this class (requires --guidance).
    #[arg(long, requires = "guidance")]
    class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output GLD1 path.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// metrics.csv written by `run`; a sibling per_class.csv is used if present.
    metrics: PathBuf,
    /// Directory for the SVG files and plots.csv.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct InspectArgs {
    file: PathBuf,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::from_json_str(&text)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut progress = |r: &collapse_lab::experiment::GenerationRecord| {
        println!(
            "generation {} loss {} fid {}",
            r.generation,
            format_sig6(r.train_loss),
            format_sig6(r.report.fid)
        );
    };
    let options = RunOptions {
        stop_after: args.stop_after,
        on_generation: Some(&mut progress),
    };
    if let Some(dir) = &args.resume {
        resume_with(dir, args.generations, options)?;
        return Ok(());
    }
    let path = args
        .config
        .as_ref()
        .expect("clap enforces config or --resume");
    let mut pairs = Vec::new();
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        pairs.push((k.to_string(), v.to_string()));
    }
    if let Some(g) = args.generations {
        pairs.push(("loop.generations".into(), g.to_string()));
    }
    let mut config = read_config(path)?.with_overrides(&pairs)?;
    if let Some(dir) = args.output_dir {
        config.output_dir = dir;
    }
    run_experiment_with(&config, options)?;
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let real = read_gld1(&args.real)?;
    let generated = read_gld1(&args.generated)?;
    if real.dim() != generated.dim() {
        return Err(Error::Shape {
            context: "metrics input dimension",
            expected: real.dim(),
            actual: generated.dim(),
        });
    }
    let classifier = match &args.classifier {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            Some(Classifier::from_snapshot(&bytes)?)
        }
        None => None,
    };
    let space = if classifier.is_some() {
        FeatureSpace::Classifier
    } else {
        FeatureSpace::Identity
    };
    let evaluator = Evaluator::new(&real, space, classifier, args.k)?;
    let report = evaluator.evaluate(&generated, 0)?;
    let header = collapse_lab::metrics::METRICS_HEADER;
    let row = report.csv_row();
    println!("{}", header.split_once(',').expect("has columns").1);
    println!("{}", row.split_once(',').expect("has columns").1);
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let bytes = std::fs::read(&args.model).map_err(|e| Error::Io {
        path: args.model.clone(),
        source: e,
    })?;
    let model = DiffusionModel::from_snapshot(&bytes)?;
    let schedule = model.schedule.build()?;
    let kind = match args.sampler {
        SamplerArg::Ddpm => SamplerKind::Ddpm,
        SamplerArg::Ddim => SamplerKind::Ddim {
            steps: args.ddim_steps,
        },
    };
    let plan = match (args.guidance, args.class) {
        (None, _) => LabelPlan::Null,
        (Some(_), None) => LabelPlan::BalancedAuto,
        (Some(_), Some(c)) => LabelPlan::Explicit(vec![c; args.n]),
    };
    let data = sample(
        &model.network,
        args.n,
        &schedule,
        kind,
        args.guidance,
        &plan,
        args.seed,
    )?;
    write_gld1(&args.out, &data)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Plot(a) => plot::cmd_plot(&a.metrics, &a.out_dir),
        Command::Inspect(a) => inspect::cmd_inspect(&a.file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error:config: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error:runtime: cannot size thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error:{}: {msg}", cat.as_str());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
