//! `unitprune`: generate synthetic heads and scenes, prune them, and measure
//! the result.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O or parse error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use unitprune::report::input_pruning_bound;
use unitprune::{
    compare_outputs, gen_network, gen_scene, load_network, load_scene, prune_output_topn,
    save_network, save_scene, specialize_on_probe, specialize_on_scene, sweep, write_sweep_csv,
    ActivationKind, LabelMap, NetworkSpec, PruneConfig, SceneSpec, Vector,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: unitprune::Error,
    },
    #[error(transparent)]
    Core(#[from] unitprune::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use unitprune::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::File { source, .. } | CliError::Core(source) => match source {
                E::Contract(_) | E::Validation(_) => 1,
                E::Parse { .. } | E::Io(_) => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "unitprune", version, about = "Specialize dense networks by pruning units that stay silent on a probe")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random network with planted dead hidden units.
    GenNet(GenNetArgs),
    /// Generate a random feature map with ROIs.
    GenScene(GenSceneArgs),
    /// Prune units that are (near) zero on a probe.
    Prune(PruneArgs),
    /// Keep only the N highest-scoring output classes.
    Topn(TopnArgs),
    /// Compare two models over every ROI of a scene.
    Eval(EvalArgs),
    /// Sweep channel thresholds and emit deviation vs. reduction as CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenNetArgs {
    /// Comma-separated widths: input, then each layer's output.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Fraction of each hidden layer's units planted dead.
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Set every bias to zero.
    #[arg(long)]
    zero_bias: bool,
    /// Activation of the final layer: identity or relu.
    #[arg(long, default_value = "identity")]
    output_activation: String,
    /// Output path, or `-` for standard output.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long, default_value_t = 512)]
    c: usize,
    #[arg(long, default_value_t = 14)]
    h: usize,
    #[arg(long, default_value_t = 14)]
    w: usize,
    #[arg(long, default_value_t = 0)]
    zero_channels: usize,
    #[arg(long, default_value_t = 1000)]
    n_rois: usize,
    #[arg(long, default_value_t = 7)]
    pool_h: usize,
    #[arg(long, default_value_t = 7)]
    pool_w: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Scene whose whole-map channel sums select first-layer input columns.
    #[arg(long, conflicts_with = "probe", required_unless_present = "probe")]
    scene: Option<PathBuf>,
    /// JSON array: a probe input profiled through the network.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Hidden layer whose units are pruned (probe mode only).
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
}

#[derive(Args)]
struct TopnArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON array of per-class scores.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_labelmap: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    labelmap: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Comma-separated ascending thresholds; `inf` is accepted.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    thresholds: Vec<f64>,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let res = if path == Path::new("-") {
        let mut out = io::stdout().lock();
        out.write_all(bytes).and_then(|()| out.flush())
    } else {
        fs::write(path, bytes)
    };
    res.map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn in_file<T>(path: &Path, res: unitprune::Result<T>) -> Result<T> {
    res.map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

fn read_model(path: &Path) -> Result<unitprune::Network> {
    in_file(path, load_network(&read(path)?))
}

fn read_scene(path: &Path) -> Result<unitprune::Scene> {
    in_file(path, load_scene(&read(path)?))
}

fn read_vector(path: &Path) -> Result<Vector> {
    let values: Vec<f64> = in_file(path, serde_json::from_slice(&read(path)?).map_err(Into::into))?;
    in_file(path, Vector::new(values))
}

fn tau_config(tau: f64) -> Result<PruneConfig> {
    PruneConfig::threshold(tau).map_err(|_| CliError::Usage(format!("--tau must be >= 0, got {tau}")))
}

fn gen_net(args: GenNetArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.sparsity) {
        return Err(CliError::Usage(format!(
            "--sparsity must lie in [0, 1], got {}",
            args.sparsity
        )));
    }
    let output_activation = match args.output_activation.as_str() {
        "identity" => ActivationKind::Identity,
        "relu" => ActivationKind::Relu,
        other => {
            return Err(CliError::Usage(format!(
                "--output-activation must be identity or relu, got {other}"
            )))
        }
    };
    let net = gen_network(&NetworkSpec {
        sizes: args.sizes,
        output_activation,
        sparsity: args.sparsity,
        zero_bias: args.zero_bias,
        seed: args.seed,
    })?;
    write(&args.out, &save_network(&net))
}

fn gen_scene_cmd(args: GenSceneArgs) -> Result<()> {
    if args.zero_channels > args.c {
        return Err(CliError::Usage(format!(
            "--zero-channels {} exceeds --c {}",
            args.zero_channels, args.c
        )));
    }
    let scene = gen_scene(&SceneSpec {
        channels: args.c,
        height: args.h,
        width: args.w,
        zero_channels: args.zero_channels,
        n_rois: args.n_rois,
        pool_h: args.pool_h,
        pool_w: args.pool_w,
        seed: args.seed,
    })?;
    write(&args.out, &save_scene(&scene))
}

fn prune(args: PruneArgs) -> Result<()> {
    let config = tau_config(args.tau)?;
    let net = read_model(&args.model)?;
    let (pruned, report) = match (&args.scene, &args.probe) {
        (Some(scene), _) => specialize_on_scene(&net, &read_scene(scene)?, config)?,
        (None, Some(probe)) => specialize_on_probe(&net, &read_vector(probe)?, args.layer, config)?,
        (None, None) => return Err(CliError::Usage("one of --scene or --probe is required".into())),
    };
    write(&args.out_model, &save_network(&pruned))?;
    write(&args.out_report, report.to_json().as_bytes())
}

fn topn(args: TopnArgs) -> Result<()> {
    let net = read_model(&args.model)?;
    let outputs = net.output_dim().unwrap_or(0);
    if args.n == 0 || args.n > outputs {
        return Err(CliError::Usage(format!(
            "--n must lie in 1..={outputs}, got {}",
            args.n
        )));
    }
    let scores = read_vector(&args.scores)?;
    let (pruned, map, _) = prune_output_topn(&net, &scores, args.n)?;
    write(&args.out_model, &save_network(&pruned))?;
    write(&args.out_labelmap, map.to_json().as_bytes())
}

fn eval(args: EvalArgs) -> Result<()> {
    let a = read_model(&args.model_a)?;
    let b = read_model(&args.model_b)?;
    let scene = read_scene(&args.scene)?;
    let map = match &args.labelmap {
        Some(p) => Some(in_file(p, LabelMap::from_json(&read(p)?))?),
        None => None,
    };
    let mut report = compare_outputs(&a, &b, map.as_ref(), &scene.examples())?;
    report.bound = input_pruning_bound(&a, &b, &scene.probe())?;
    write(Path::new("-"), report.to_json().as_bytes())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    if args.thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(CliError::Usage("thresholds must be >= 0".into()));
    }
    if args.thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(CliError::Usage("--thresholds must be sorted ascending".into()));
    }
    let net = read_model(&args.model)?;
    let scene = read_scene(&args.scene)?;
    let points = sweep(&net, &scene, &args.thresholds)?;
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv).expect("writing to memory");
    write(&args.out, &csv)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenNet(a) => gen_net(a),
        Command::GenScene(a) => gen_scene_cmd(a),
        Command::Prune(a) => prune(a),
        Command::Topn(a) => topn(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
