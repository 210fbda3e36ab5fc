use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lwek::oracles::{linspace, mf_d_kappa, posterior_1d_quadratic, posterior_shell_pushforward, QuadratureMeasure, DEFAULT_NODES_1D};
use lwek::KernelSpec;
use lwek_cli::config::{Experiment, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "lwek", version, about = "Locally weighted ensemble Kalman experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config, with optional flag overrides.
    Run(RunArgs),
    /// Local function approximation around an anchor point.
    Approx(ApproxArgs),
    /// Write reference curves from the quadrature oracles.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Function {
    Sine,
    Himmelblau,
}

#[derive(Args)]
struct ApproxArgs {
    #[arg(long, value_enum, default_value = "sine")]
    function: Function,
    /// Kernel bandwidths; repeat the flag to sweep several.
    #[arg(long)]
    bandwidth: Vec<f64>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    anchor: Option<Vec<f64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Posterior density of the scalar quadratic problem.
    Posterior1d {
        #[arg(long, default_value_t = 0.5)]
        noise_std: f64,
        #[arg(long, default_value_t = 1.0)]
        data: f64,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Density of the particle norm under the shell posterior.
    Shell {
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 45.0)]
        data: f64,
        #[arg(long, default_value_t = 12000)]
        points: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Mean-field ensemble derivative of sin for a uniform density on [-3, 3].
    MfSine {
        #[arg(long, default_value_t = 0.2)]
        bandwidth: f64,
        #[arg(long, default_value_t = 121)]
        points: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        experiment: args.experiment,
        bandwidth: args.bandwidth,
        ensemble_size: args.ensemble_size,
        seed: args.seed,
        t_end: args.t_end,
        step: args.step,
        output_dir: args.output_dir,
    });
    let settings = config.resolve()?;
    let manifest = lwek_cli::run(&settings)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn approx(args: ApproxArgs) -> anyhow::Result<()> {
    let experiment = match args.function {
        Function::Sine => Experiment::ApproxSine,
        Function::Himmelblau => Experiment::ApproxHimmelblau,
    };
    let mut config = RunConfig::for_experiment(experiment);
    if !args.bandwidth.is_empty() {
        config.bandwidths = Some(args.bandwidth);
    }
    config.ensemble_size = args.ensemble_size;
    config.seed = args.seed;
    config.anchor = args.anchor;
    config.output_dir = args.output_dir;
    let manifest = lwek_cli::run(&config.resolve()?)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn write_curve(curve: &lwek::oracles::DensityCurve, output: &PathBuf) -> anyhow::Result<()> {
    let file = std::fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    curve.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn oracle(which: OracleCommand) -> anyhow::Result<()> {
    match which {
        OracleCommand::Posterior1d { noise_std, data, points, output } => {
            let curve = posterior_1d_quadratic(&linspace(-6.0, 4.0, points), data, noise_std)?;
            write_curve(&curve, &output)?;
            println!("modes {:?}", curve.modes());
        }
        OracleCommand::Shell { sigma, dim, data, points, output } => {
            let curve = posterior_shell_pushforward(&linspace(1e-3, 12.0, points), sigma, dim, data)?;
            write_curve(&curve, &output)?;
            println!("mode {}", curve.argmax());
        }
        OracleCommand::MfSine { bandwidth, points, output } => {
            let measure = QuadratureMeasure::uniform_interval(-3.0, 3.0, DEFAULT_NODES_1D)?;
            let mf = lwek::oracles::MeanField::new(measure.clone(), &lwek::maps::Sine)?;
            let kernel = KernelSpec::gaussian(bandwidth);
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&output)?;
            w.write_record(["x", "d_kappa", "cos"])?;
            for x in linspace(-3.0, 3.0, points) {
                let d = mf.d_kappa(&kernel, &[x])?.matrix[(0, 0)];
                w.write_record([x.to_string(), d.to_string(), x.cos().to_string()])?;
            }
            w.flush()?;
            let at = mf_d_kappa(&kernel, &measure, &lwek::maps::Sine, &[std::f64::consts::FRAC_PI_4])?;
            println!("slope at pi/4: {}", at.matrix[(0, 0)]);
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    lwek_cli::configure_threads()?;
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Approx(a) => approx(a),
        Command::Oracle { which } => oracle(which),
    }
}
