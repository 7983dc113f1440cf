use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bilevel::benchmarks::GradCheckOptions;
use bilevel::discovery::Criterion;
use bilevel::{BenchmarkName, DiscoveryConfig, HessianMode, OuterOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Estimate,
    Discover,
    Gradcheck,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Estimate => "estimate",
            Self::Discover => "discover",
            Self::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Paper,
    ExactChain,
    GaussNewton,
}

impl From<ModeArg> for HessianMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Paper => HessianMode::Paper,
            ModeArg::ExactChain => HessianMode::ExactChain,
            ModeArg::GaussNewton => HessianMode::GaussNewton,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bilevel", version, about = "Bi-level parameter estimation and sparse model discovery")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Simulate a model and write one trajectory CSV per experiment.
    Simulate(Flags),
    /// Fit parameters to data (synthetic data from the truth when no --data is given).
    Estimate(Flags),
    /// Sparse discovery over a candidate library.
    Discover(Flags),
    /// Compare analytic derivatives with finite differences.
    Gradcheck(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// TOML file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in benchmark: calcium, mendes, km_dde, carboxylic.
    #[arg(long, conflicts_with = "model")]
    problem: Option<String>,
    /// Custom model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trajectory CSVs, one per experiment.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of experiments for randomized designs (carboxylic).
    #[arg(long)]
    experiments: Option<usize>,
    /// Initial phi, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    phi0: Option<Vec<f64>>,
    /// Relative spread of the random initial phi around the truth.
    #[arg(long)]
    init_spread: Option<f64>,
    #[arg(long, value_enum)]
    hessian_mode: Option<ModeArg>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    gradient_tolerance: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Per-stage gradient tolerances, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "iteration_schedule")]
    tolerance_schedule: Option<Vec<f64>>,
    /// Per-stage iteration caps, comma separated; `none` leaves a stage uncapped.
    #[arg(long, value_delimiter = ',')]
    iteration_schedule: Option<Vec<String>>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Random points for gradcheck.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    fd_step: Option<f64>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<String>,
    model: Option<PathBuf>,
    data: Option<Vec<PathBuf>>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    experiments: Option<usize>,
    phi0: Option<Vec<f64>>,
    init_spread: Option<f64>,
    hessian_mode: Option<HessianMode>,
    outer: Option<OuterOptions>,
    discovery: Option<DiscoveryConfig>,
    gradcheck: Option<GradCheckOptions>,
}

/// Fully defaulted and validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub problem: Option<BenchmarkName>,
    pub model: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub experiments: Option<usize>,
    pub phi0: Option<Vec<f64>>,
    pub init_spread: f64,
    pub outer: OuterOptions,
    /// `outer` and `seed` inside are kept equal to the top-level values.
    pub discovery: DiscoveryConfig,
    pub gradcheck: GradCheckOptions,
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Parses argv (including the program name). Clap errors and `--help` come
/// back as `CliError::Clap` so the caller can print them with clap's exit code.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Estimate(f) => (Command::Estimate, f),
        Sub::Discover(f) => (Command::Discover, f),
        Sub::Gradcheck(f) => (Command::Gradcheck, f),
    };

    let (file, mode_in_file) = match &flags.config {
        Some(path) => {
            require_exists(path, "config file")?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let raw: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if let Some(d) = raw.get("discovery").and_then(|d| d.as_table()) {
                for key in ["outer", "seed"] {
                    if d.contains_key(key) {
                        return Err(CliError::Usage(format!(
                            "{}: set `{key}` at the top level, not under [discovery]",
                            path.display()
                        )));
                    }
                }
            }
            let mode_in_outer = raw
                .get("outer")
                .and_then(|o| o.as_table())
                .is_some_and(|o| o.contains_key("hessian_mode"));
            let file: FileConfig = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let explicit = mode_in_outer || file.hessian_mode.is_some();
            (file, explicit)
        }
        None => (FileConfig::default(), false),
    };

    let problem_name = flags.problem.or(file.problem);
    let model = flags.model.or(file.model);
    if problem_name.is_some() && model.is_some() {
        return Err(CliError::Usage("give either a problem or a model file, not both".into()));
    }
    let problem = match &problem_name {
        Some(name) => Some(
            name.parse::<BenchmarkName>()
                .map_err(|_| CliError::Usage(format!("unknown problem `{name}`")))?,
        ),
        None => None,
    };
    match &model {
        Some(path) => require_exists(path, "model file")?,
        None if problem.is_none() => {
            return Err(CliError::Usage("one of --problem or --model is required".into()));
        }
        None => {}
    }
    let data = if flags.data.is_empty() { file.data.unwrap_or_default() } else { flags.data };
    for path in &data {
        require_exists(path, "data file")?;
    }

    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let mut outer = file.outer.unwrap_or_default();
    if let Some(mode) = file.hessian_mode {
        outer.hessian_mode = mode;
    }
    match flags.hessian_mode {
        Some(mode) => outer.hessian_mode = mode.into(),
        // the built-in benchmarks converge far faster under Gauss-Newton curvature
        None if !mode_in_file && problem.is_some() => outer.hessian_mode = HessianMode::GaussNewton,
        None => {}
    }
    if let Some(v) = flags.max_iterations {
        outer.max_iterations = v;
    }
    if let Some(v) = flags.gradient_tolerance {
        outer.gradient_tolerance = v;
    }

    let mut discovery = file.discovery.unwrap_or_default();
    if let Some(v) = flags.epsilon {
        discovery.epsilon = v;
    }
    if let Some(v) = flags.ridge {
        discovery.ridge = v;
    }
    if let Some(v) = flags.tolerance_schedule {
        discovery.criterion = Criterion::ToleranceSchedule(v);
    }
    if let Some(v) = flags.iteration_schedule {
        let caps = v
            .iter()
            .map(|s| match s.trim() {
                "none" => Ok(None),
                s => s
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| CliError::Usage(format!("bad iteration cap `{s}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        discovery.criterion = Criterion::IterationSchedule(caps);
    }
    if let Some(v) = flags.max_rounds {
        discovery.max_rounds = v;
    }
    discovery.seed = seed;
    discovery.outer = outer.clone();
    discovery.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut gradcheck = file.gradcheck.unwrap_or_default();
    gradcheck.seed = seed;
    if let Some(v) = flags.points {
        gradcheck.points = v;
    }
    if let Some(v) = flags.fd_step {
        gradcheck.fd_step = v;
    }

    let init_spread = flags.init_spread.or(file.init_spread).unwrap_or(0.2);
    if !(0.0..1.0).contains(&init_spread) {
        return Err(CliError::Usage(format!("init_spread must be in [0, 1), got {init_spread}")));
    }

    Ok(RunConfig {
        command,
        problem,
        model,
        data,
        output: flags.output.or(file.output).unwrap_or_else(|| PathBuf::from("out")),
        seed,
        experiments: flags.experiments.or(file.experiments),
        phi0: flags.phi0.or(file.phi0),
        init_spread,
        outer,
        discovery,
        gradcheck,
    })
}
