use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gsr", version, about = "Run-length distribution of the generalized Shiryaev-Roberts procedure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ARL to false alarm at one headstart.
    Arl(ArlArgs),
    /// ARL and standard deviation of the run length at one or more headstarts.
    Moments(MomentsArgs),
    /// Survival function rho_k = P(T > k) with pmf and geometric reference.
    Survival(SurvivalArgs),
    /// Probability mass function P(T = k).
    Pmf(SurvivalArgs),
    /// Conditional probability of a false alarm in (k, k + m] given none by k.
    Pfa(PfaArgs),
    /// Threshold A whose ARL equals a target gamma.
    Calibrate(CalibrateArgs),
    /// Self-convergence table with Richardson rates.
    Converge(ConvergeArgs),
    /// Hat-collocation versus midpoint, measured against the largest hat solution.
    Compare(CompareArgs),
    /// Monte Carlo estimates under the pre-change measure.
    Simulate(SimulateArgs),
    /// Regenerate an output file from the command line recorded in its header.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsiKind {
    Gsr,
    Cusum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodKind {
    Hat,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Post-change mean shift (> 0).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = PsiKind::Gsr)]
    pub psi: PsiKind,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ThresholdSource {
    /// Detection threshold A.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Target ARL; A is calibrated to it first.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub source: ThresholdSource,
    /// Partition size used when calibrating from --gamma.
    #[arg(long, default_value_t = 512)]
    pub calibration_nodes: usize,
    /// Relative tolerance of the calibration.
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ArlArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    /// Partition size: Chebyshev nodes (hat) or subintervals (midpoint).
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = MethodKind::Hat)]
    pub method: MethodKind,
    /// Also write the kernel matrix as CSV to this path.
    #[arg(long)]
    pub dump_matrix: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    /// Comma-separated headstarts.
    #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
    pub headstart: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = MethodKind::Hat)]
    pub method: MethodKind,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SurvivalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = MethodKind::Hat)]
    pub method: MethodKind,
    /// Largest k; defaults to max(10^6, 50 ARL).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Stop once rho_k falls below this.
    #[arg(long, default_value_t = 1e-12)]
    pub epsilon_tail: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PfaArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = MethodKind::Hat)]
    pub method: MethodKind,
    /// Comma-separated conditioning times.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// Comma-separated window lengths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    /// Partition sizes, e.g. `2,4,...,4096`.
    #[arg(long, value_parser = parse_sizes)]
    pub nodes: Sizes,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hat")]
    pub method: Vec<MethodKind>,
    #[arg(long, default_value_t = gsr_core::analysis::DEFAULT_PROBE_POINTS)]
    pub probe_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    #[arg(long, value_parser = parse_sizes)]
    pub nodes: Sizes,
    #[arg(long, default_value_t = gsr_core::analysis::DEFAULT_PROBE_POINTS)]
    pub probe_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub headstart: f64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Per-path step cap; defaults to 100 max(A, 1).
    #[arg(long)]
    pub cap: Option<u64>,
    /// Survival times to estimate, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Window lengths for conditional PFA at each --k.
    #[arg(long, value_delimiter = ',', requires = "k")]
    pub m: Vec<usize>,
    /// Also write the run-length histogram as CSV to this path.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A CSV or JSON file written by this tool.
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Partition sizes in the order given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sizes(pub Vec<usize>);

/// Parses `a,b,c` and geometric shorthand `2,4,...,4096`.
pub fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).collect();
    let mut out: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == "..." {
            let (a, b) = match out.as_slice() {
                [.., a, b] => (*a, *b),
                _ => return Err("`...` needs two sizes before it".into()),
            };
            let end: usize = tokens
                .get(i + 1)
                .ok_or("`...` needs a final size after it")?
                .parse()
                .map_err(|e| format!("bad size: {e}"))?;
            if a == 0 || b <= a || b % a != 0 {
                return Err(format!("cannot extend {a},{b} geometrically"));
            }
            let ratio = b / a;
            let mut next = b * ratio;
            while next < end {
                out.push(next);
                next *= ratio;
            }
            if next != end {
                return Err(format!("{end} is not reached from {a},{b} by factors of {ratio}"));
            }
            out.push(end);
            i += 2;
        } else {
            out.push(tokens[i].parse().map_err(|e| format!("bad size `{}`: {e}", tokens[i]))?);
            i += 1;
        }
    }
    if out.is_empty() {
        return Err("no sizes given".into());
    }
    Ok(Sizes(out))
}

/// Builds the canonical `--flag=value` form of a command line.
#[derive(Default)]
pub struct Canonical(String);

impl Canonical {
    pub fn new(command: &str) -> Self {
        Self(command.to_string())
    }

    pub fn flag(mut self, name: &str, value: impl std::fmt::Display) -> Self {
        write!(self.0, " --{name}={value}").unwrap();
        self
    }

    pub fn num(self, name: &str, value: f64) -> Self {
        self.flag(name, format!("{value:?}"))
    }

    pub fn list<T: std::fmt::Display>(self, name: &str, values: &[T]) -> Self {
        let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        self.flag(name, joined)
    }

    pub fn nums(self, name: &str, values: &[f64]) -> Self {
        let joined = values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
        self.flag(name, joined)
    }

    pub fn finish(self) -> String {
        self.0
    }
}

impl ModelArgs {
    pub fn canonical(&self, c: Canonical) -> Canonical {
        c.num("theta", self.theta).flag("psi", self.psi.name())
    }
}

impl ThresholdArgs {
    pub fn canonical(&self, c: Canonical) -> Canonical {
        match (self.source.threshold, self.source.gamma) {
            (Some(a), _) => c.num("threshold", a),
            (None, Some(g)) => c
                .num("gamma", g)
                .flag("calibration-nodes", self.calibration_nodes)
                .num("rel-tol", self.rel_tol),
            (None, None) => c,
        }
    }
}

impl PsiKind {
    pub fn name(self) -> &'static str {
        match self {
            PsiKind::Gsr => "gsr",
            PsiKind::Cusum => "cusum",
        }
    }
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Hat => "hat",
            MethodKind::Midpoint => "midpoint",
        }
    }
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}
