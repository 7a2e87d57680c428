use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zonotube_cli::bounds::bound_report;
use zonotube_cli::config::{ExperimentConfig, GainModeSpec, ResolvedConfig};
use zonotube_cli::pipeline::{self, PhaseError};
use zonotube_cli::plotdata::{emit_plot_data, validate_bundle};

const EXIT_CODE_GUIDE: &str = "\
Exit codes:
  0  success
  2  configuration or usage error
  3  data-collection failure
  4  model-set construction failure
  5  gain verification/synthesis failure
  6  tube propagation failure
  7  closed-loop failure
  8  artifact I/O failure
  9  plot-data input missing or malformed";

#[derive(Parser)]
#[command(
    name = "zonotube",
    version,
    about = "Data-driven tube predictive control experiment runner",
    after_help = EXIT_CODE_GUIDE
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetName {
    /// The shipped double-integrator scenario.
    #[value(name = "double_integrator")]
    DoubleIntegrator,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON document).
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario instead of a config file.
    #[arg(long, value_enum, value_name = "NAME")]
    preset: Option<PresetName>,
    /// Overrides the config's master seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Scales the state-constraint generators by (1 + pct/100); opt-in.
    #[arg(long = "enlarge-zx", value_name = "PCT", allow_hyphen_values = true)]
    enlarge_zx: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the data-collection run and write dataset.csv.
    Collect(CommonArgs),
    /// Build the data-consistent model set and write m_data.json.
    Mdata(CommonArgs),
    /// Verify a given gain or synthesize one; writes gain_certificate.json.
    Gain {
        #[command(subcommand)]
        action: GainCmd,
    },
    /// Tabulate the worst-case error tube and write tube_bounds.csv.
    Tube(CommonArgs),
    /// Full pipeline: all artifacts plus summary.json.
    Run(CommonArgs),
    /// Bundle the trajectory and constraint geometry for an external plotter.
    Plotdata(CommonArgs),
    /// Vertex-count bound per horizon vs. per-step tube rows.
    Bounds(BoundsArgs),
}

#[derive(Subcommand)]
enum GainCmd {
    /// Check the configured gain against the sampled model family.
    Verify(CommonArgs),
    /// Search for a gain via sampled common-Lyapunov feasibility.
    Synth(CommonArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// State dimension.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Input dimension.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Recorded transitions.
    #[arg(long, default_value_t = 100)]
    t: usize,
    /// Noise-zonotope generator count.
    #[arg(long = "gamma-w", default_value_t = 2)]
    gamma_w: usize,
    /// Horizons to tabulate.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    horizons: Vec<usize>,
    /// Also write bound_report.csv into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

type CmdResult = Result<(), (i32, String)>;

fn phase_err(e: PhaseError) -> (i32, String) {
    (e.phase.exit_code(), format!("{}: {}", e.phase.name(), e.message))
}

fn load(
    common: &CommonArgs,
    gain_override: Option<GainModeSpec>,
) -> Result<ResolvedConfig, (i32, String)> {
    let mut raw = match (&common.config, &common.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| (2, format!("config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| (2, e))?
        }
        (None, Some(PresetName::DoubleIntegrator)) => ExperimentConfig::double_integrator(),
        (None, None) => return Err((2, "one of --config or --preset is required".into())),
    };
    if let Some(seed) = common.seed {
        raw.master_seed = seed;
    }
    if let Some(out) = &common.out {
        raw.out_dir = out.clone();
    }
    if let Some(pct) = common.enlarge_zx {
        raw.enlarge_state_constraint(pct).map_err(|e| (2, e))?;
    }
    if let Some(mode) = gain_override {
        raw.gain.mode = mode;
    }
    raw.resolve().map_err(|e| (2, e))
}

fn cmd_collect(common: &CommonArgs) -> CmdResult {
    let rc = load(common, None)?;
    let data = pipeline::build_dataset(&rc).map_err(phase_err)?;
    let path = rc.out_dir.join("dataset.csv");
    pipeline::write_text(&path, &pipeline::dataset_csv(&data)).map_err(phase_err)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_mdata(common: &CommonArgs) -> CmdResult {
    let rc = load(common, None)?;
    let data = pipeline::build_dataset(&rc).map_err(phase_err)?;
    let (m_d, _) = pipeline::build_model_set(&rc, &data).map_err(phase_err)?;
    let path = rc.out_dir.join("m_data.json");
    pipeline::write_text(&path, &pipeline::to_pretty_json(&m_d).map_err(phase_err)?)
        .map_err(phase_err)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_gain(common: &CommonArgs, mode: GainModeSpec) -> CmdResult {
    let rc = load(common, Some(mode))?;
    let data = pipeline::build_dataset(&rc).map_err(phase_err)?;
    let (m_d, _) = pipeline::build_model_set(&rc, &data).map_err(phase_err)?;
    let cert = pipeline::build_gain(&rc, &m_d).map_err(phase_err)?;
    let path = rc.out_dir.join("gain_certificate.json");
    pipeline::write_text(&path, &pipeline::to_pretty_json(&cert).map_err(phase_err)?)
        .map_err(phase_err)?;
    println!("{}", path.display());
    eprintln!(
        "gain certified: {} samples, max spectral radius {:.6}",
        cert.num_samples, cert.max_spectral_radius
    );
    Ok(())
}

fn cmd_tube(common: &CommonArgs) -> CmdResult {
    let rc = load(common, None)?;
    let data = pipeline::build_dataset(&rc).map_err(phase_err)?;
    let (m_d, nominal) = pipeline::build_model_set(&rc, &data).map_err(phase_err)?;
    let cert = pipeline::build_gain(&rc, &m_d).map_err(phase_err)?;
    let ops = pipeline::build_operators(&rc, &m_d, &nominal, &cert).map_err(phase_err)?;
    let seq = pipeline::build_tube_table(&rc, &ops).map_err(phase_err)?;
    let path = rc.out_dir.join("tube_bounds.csv");
    pipeline::write_text(
        &path,
        &zonotube::tube::tube_bounds_csv(&seq[..=rc.tube_table_steps]),
    )
    .map_err(phase_err)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_run(common: &CommonArgs) -> CmdResult {
    let rc = load(common, None)?;
    let (summary, error) = pipeline::run_pipeline(&rc);
    pipeline::write_summary(&rc.out_dir, &summary).map_err(phase_err)?;
    println!("{}", rc.out_dir.join("summary.json").display());
    match error {
        None => Ok(()),
        Some(e) => Err(phase_err(e)),
    }
}

fn cmd_plotdata(common: &CommonArgs) -> CmdResult {
    let rc = load(common, None)?;
    let trajectory = rc.out_dir.join("trajectory.csv");
    let bundle = emit_plot_data(
        &trajectory,
        &rc.ocp_spec.state_constraint,
        &rc.ocp_spec.input_constraint,
    )
    .map_err(|e| (9, e))?;
    let value = serde_json::to_value(&bundle).map_err(|e| (9, e.to_string()))?;
    validate_bundle(&value).map_err(|e| (9, format!("bundle failed self-validation: {e}")))?;
    let path = rc.out_dir.join("plot_data.json");
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| (9, e.to_string()))?;
    text.push('\n');
    pipeline::write_text(&path, &text).map_err(phase_err)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_bounds(args: &BoundsArgs) -> CmdResult {
    for (name, v) in [
        ("--n", args.n),
        ("--m", args.m),
        ("--t", args.t),
        ("--gamma-w", args.gamma_w),
    ] {
        if v == 0 {
            return Err((2, format!("{name}: must be at least 1")));
        }
    }
    if args.horizons.is_empty() || args.horizons.contains(&0) {
        return Err((2, "--horizons: need at least one positive horizon".into()));
    }
    let report = bound_report(args.n, args.m, args.t, args.gamma_w, &args.horizons);
    print!("{report}");
    if let Some(dir) = &args.out {
        pipeline::write_text(&dir.join("bound_report.csv"), &report).map_err(phase_err)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Collect(c) => cmd_collect(c),
        Cmd::Mdata(c) => cmd_mdata(c),
        Cmd::Gain { action } => match action {
            GainCmd::Verify(c) => cmd_gain(c, GainModeSpec::Verify),
            GainCmd::Synth(c) => cmd_gain(c, GainModeSpec::Synthesize),
        },
        Cmd::Tube(c) => cmd_tube(c),
        Cmd::Run(c) => cmd_run(c),
        Cmd::Plotdata(c) => cmd_plotdata(c),
        Cmd::Bounds(a) => cmd_bounds(a),
    };
    if let Err((code, message)) = result {
        eprintln!("error: {message}");
        std::process::exit(code);
    }
}
