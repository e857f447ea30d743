//! Command-line front end for the `hankel-arma` library.
//!
//! Every subcommand writes its artifacts, an echo of the effective
//! configuration (`config.json`) and a `manifest.json` into `--out`. Knob values
//! are resolved as flag > environment (`HANKEL_ARMA_SEED` for the seed) > the
//! JSON file given by `--config` > built-in default.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use hankel_arma::hankel::{build_hankel, ok_product};
use hankel_arma::io::{read_matrix_csv, write_matrix_csv};
use hankel_arma::montecarlo::{
    calibrate_eta, mc_chi_tails, mc_estimation_experiment, mc_h_norms, mc_sigma_h, mc_width, DescentConeSpec,
    ExperimentOptions, McConfig,
};
use hankel_arma::numerics::Svd;
use hankel_arma::realization::{realize, realize_with_rule, select_order, OrderRule};
use hankel_arma::rng::stream_rng;
use hankel_arma::solver::{solve_constrained, solve_ls, solve_nuclear, SolverConfig, SolverResult, Target};
use hankel_arma::theory::{lambda_bound, lambda_bound_optimized, width_bound, TheoryContext};
use hankel_arma::{ArmaModel, CovarianceModel, Error, Result, Trajectory};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "HANKEL_ARMA_SEED";

/// Exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const VALIDATION: i32 = 3;
    pub const SCALE_GUARD: i32 = 4;
    pub const NUMERICAL: i32 = 5;
    pub const IO: i32 = 6;
}

/// Stream used to draw the random descent cone for `mc-width`.
const CONE_STREAM: u64 = u64::MAX;

#[derive(Parser, Debug)]
#[command(
    name = "hankel-arma",
    version,
    about = "Nuclear-norm subspace identification of ARMA models and Monte Carlo checks of its error bound"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate an ARMA trajectory.
    Simulate(SimulateArgs),
    /// Build the past, future and noise Hankel matrices of a trajectory.
    Hankel(HankelArgs),
    /// Estimate OK from a trajectory with the nuclear-norm program.
    Estimate(EstimateArgs),
    /// Select an order and realize (A, B, K) from an estimate.
    Realize(RealizeArgs),
    /// Evaluate every quantity of the error bound in closed form.
    Bounds(BoundsArgs),
    /// Monte Carlo covariance of vec(H).
    McSigmah(McSigmahArgs),
    /// Monte Carlo width and statistical dimension of the descent cone.
    McWidth(McWidthArgs),
    /// Monte Carlo norms of a Gaussian matrix and chi tail frequencies.
    McNorms(McNormsArgs),
    /// End-to-end estimation experiment against the error bound.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Output directory
    #[arg(long, default_value = "hankel-arma-out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// JSON file with knob values; explicit flags win over it [default: unset]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SeedArgs {
    /// Base seed of the random streams (also read from HANKEL_ARMA_SEED)
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

/// Comma-separated coefficient list; `none` is the empty list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coeffs(pub Vec<f64>);

impl FromStr for Coeffs {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Coeffs(Vec::new()));
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad coefficient {v:?}: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(Coeffs)
    }
}

impl fmt::Display for Coeffs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// A number or a keyword, serialized as a JSON number or string.
macro_rules! keyword_or_number {
    ($name:ident, $kw:ident, $text:literal) => {
        #[derive(Clone, Copy, Debug, PartialEq)]
        pub enum $name {
            $kw,
            Value(f64),
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                if s.trim().eq_ignore_ascii_case($text) {
                    return Ok($name::$kw);
                }
                s.trim()
                    .parse::<f64>()
                    .map($name::Value)
                    .map_err(|_| format!("expected a number or {:?}, got {s:?}", $text))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                match self {
                    $name::$kw => s.serialize_str($text),
                    $name::Value(v) => s.serialize_f64(*v),
                }
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Num(f64),
                    Text(String),
                }
                match Raw::deserialize(d)? {
                    Raw::Num(v) => Ok($name::Value(v)),
                    Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

keyword_or_number!(EtaChoice, Auto, "auto");
keyword_or_number!(XiChoice, Optimize, "optimize");

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ModelArgs {
    /// ARMA model JSON (keys p, q, a, b, sigma_eps2); replaces the inline coefficients [default: unset]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// AR order
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// AR coefficients a_1..a_p, comma separated
    #[arg(long, default_value = "0.5", allow_hyphen_values = true)]
    pub a: Coeffs,
    /// MA order
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    /// MA coefficients b_1..b_q, comma separated
    #[arg(long, default_value = "none", allow_hyphen_values = true)]
    pub b: Coeffs,
    /// Noise variance
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<ArmaModel> {
        if let Some(path) = &self.model {
            return ArmaModel::from_json(File::open(path)?);
        }
        if self.a.0.len() != self.p || self.b.0.len() != self.q {
            return Err(Error::InvalidModel(format!(
                "p={} and q={} do not match {} AR and {} MA coefficients",
                self.p,
                self.q,
                self.a.0.len(),
                self.b.0.len()
            )));
        }
        ArmaModel::new(self.a.0.clone(), self.b.0.clone(), self.sigma2)
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SolverArgs {
    /// Iteration cap of the proximal-gradient solver
    #[arg(long, default_value_t = 50_000)]
    pub max_iters: usize,
    /// Relative objective change that stops the solver
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Singular values below this fraction of the largest count as zero in the reported rank
    #[arg(long, default_value_t = 1e-6)]
    pub rank_threshold: f64,
}

impl SolverArgs {
    fn config(&self, target: Target) -> SolverConfig {
        SolverConfig {
            target,
            max_iters: self.max_iters,
            rel_tol: self.tol,
            rank_threshold: self.rank_threshold,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderRuleArg {
    Threshold,
    LogGap,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct OrderArgs {
    /// Order selection rule
    #[arg(long, value_enum, default_value_t = OrderRuleArg::Threshold)]
    pub order_rule: OrderRuleArg,
    /// Relative threshold of the threshold rule
    #[arg(long, default_value_t = 1e-6)]
    pub order_threshold: f64,
}

impl OrderArgs {
    fn rule(&self) -> OrderRule {
        match self.order_rule {
            OrderRuleArg::Threshold => OrderRule::Threshold(self.order_threshold),
            OrderRuleArg::LogGap => OrderRule::LogGap,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Horizon T; the trajectory holds T + 1 samples
    #[arg(long = "T", id = "T", default_value_t = 1000)]
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Seed of the noise stream (also read from HANKEL_ARMA_SEED)
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct HankelArgs {
    /// Trajectory CSV (index,x,e) [default: unset]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Window depth t
    #[arg(long, default_value_t = 8)]
    pub t: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Trajectory CSV (index,x,e) [default: unset]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Window depth t
    #[arg(long, default_value_t = 8)]
    pub t: usize,
    /// Penalty weight; when set the penalized program replaces the constrained one [default: unset]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Residual level of the constrained program, or `auto` to calibrate it from the model
    #[arg(long, default_value = "auto")]
    pub eta: EtaChoice,
    /// Confidence parameter; auto calibration takes the 1 - exp(-nu^2/2) quantile of the nuisance norm
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Replicates behind the auto calibration
    #[arg(long, default_value_t = 200)]
    pub calibration_replicates: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub order: OrderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RealizeArgs {
    /// Estimate CSV written by `estimate` [default: unset]
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Fixed order; overrides the order rule [default: unset]
    #[arg(long)]
    pub p_hat: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub order: OrderArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BoundsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Window depth t
    #[arg(long, default_value_t = 8)]
    pub t: usize,
    /// Horizon T
    #[arg(long = "T", id = "T", default_value_t = 1000)]
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Constant c of the width bound
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Small-ball level xi, or `optimize` to maximize Lambda over it
    #[arg(long, default_value = "optimize")]
    pub xi: XiChoice,
    /// Confidence parameter nu
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Residual level eta entering 2 eta / Lambda
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Rank of OK; unset uses the rank of the model's exact OK [default: unset]
    #[arg(long)]
    pub rank: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct McSigmahArgs {
    /// Window depth t
    #[arg(long, default_value_t = 2)]
    pub t: usize,
    /// Horizon T
    #[arg(long = "T", id = "T", default_value_t = 9)]
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Monte Carlo replicates
    #[arg(long, default_value_t = 100_000)]
    pub replicates: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeSource {
    /// Haar-random singular bases of rank r
    Random,
    /// Singular bases of the model's exact OK
    Model,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct McWidthArgs {
    /// Matrix size t
    #[arg(long, default_value_t = 6)]
    pub t: usize,
    /// Rank of the point the cone is taken at (random cones only)
    #[arg(long, default_value_t = 2)]
    pub r: usize,
    /// Where the cone's singular bases come from
    #[arg(long, value_enum, default_value_t = ConeSource::Random)]
    pub cone: ConeSource,
    /// Constant c of the width bound
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Monte Carlo replicates
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct McNormsArgs {
    /// Matrix size t
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    /// Constant c in the second-moment inequality
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Monte Carlo replicates for the matrix norms
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Degrees of freedom for the chi tail check, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub chi_nu: Vec<usize>,
    /// Samples per degree of freedom for the chi tail check; 0 skips it
    #[arg(long, default_value_t = 100_000)]
    pub chi_samples: usize,
    /// Upper tail parameter s in sqrt(nu) + sqrt(2s)
    #[arg(long, default_value_t = 1.0)]
    pub chi_s: f64,
    /// Lower tail parameter u in sqrt(u nu)
    #[arg(long, default_value_t = 0.1)]
    pub chi_u: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Window depth t
    #[arg(long, default_value_t = 6)]
    pub t: usize,
    /// Horizon T
    #[arg(long = "T", id = "T", default_value_t = 1000)]
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Confidence parameter nu
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Monte Carlo replicates
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Constant c of the width bound
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Small-ball level xi, or `optimize` to maximize Lambda over it
    #[arg(long, default_value = "optimize")]
    pub xi: XiChoice,
    /// Replicates behind the calibration of eta
    #[arg(long, default_value_t = 200)]
    pub calibration_replicates: usize,
    /// Factor on the nuisance term of X_future
    #[arg(long, default_value_t = 1.0)]
    pub nuisance_scale: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub order: OrderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub seed: SeedArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub common: CommonArgs,
}

/// Maps an error to its exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ScaleGuard(_) => exit::SCALE_GUARD,
        Error::Io(_) | Error::Csv(_) => exit::IO,
        Error::Json(_) => exit::VALIDATION,
        e if e.is_validation() => exit::VALIDATION,
        _ => exit::NUMERICAL,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&matches) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    match cli.command {
        Command::Simulate(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_simulate(&a, name)
        }
        Command::Hankel(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_hankel(&a, name)
        }
        Command::Estimate(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_estimate(&a, name)
        }
        Command::Realize(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_realize(&a, name)
        }
        Command::Bounds(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_bounds(&a, name)
        }
        Command::McSigmah(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_mc_sigmah(&a, name)
        }
        Command::McWidth(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_mc_width(&a, name)
        }
        Command::McNorms(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_mc_norms(&a, name)
        }
        Command::Experiment(a) => {
            let a = resolve(a, sub, |a| &a.common, |a, c| a.common = c)?;
            run_experiment(&a, name)
        }
    }
}

/// Fills every knob not given on the command line or through the environment
/// from the `--config` file.
fn resolve<A>(
    parsed: A,
    matches: &ArgMatches,
    common: impl Fn(&A) -> &CommonArgs,
    set: impl Fn(&mut A, CommonArgs),
) -> Result<A>
where
    A: Serialize + DeserializeOwned,
{
    let common = common(&parsed).clone();
    let Some(path) = &common.config else { return Ok(parsed) };
    let file: serde_json::Map<String, serde_json::Value> = serde_json::from_reader(File::open(path)?)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let serde_json::Value::Object(mut merged) = serde_json::to_value(&parsed)? else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in file {
        if !merged.contains_key(&key) {
            return Err(Error::InvalidArgument(format!("config {}: unknown key {key:?}", path.display())));
        }
        let explicit = matches!(
            matches.try_get_raw(&key).ok().flatten().and(matches.value_source(&key)),
            Some(ValueSource::CommandLine | ValueSource::EnvVariable)
        );
        if !explicit {
            merged.insert(key, value);
        }
    }
    let mut out: A = serde_json::from_value(serde_json::Value::Object(merged))
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    set(&mut out, common);
    Ok(out)
}

fn require_file(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let path = path.clone().ok_or_else(|| Error::InvalidArgument(format!("{flag} is required")))?;
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("{flag} {} does not exist", path.display())));
    }
    Ok(path)
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(v)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Output directory with a record of what was written into it.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, v: &T) -> Result<()> {
        let bytes = json_bytes(v)?;
        self.write(name, |w| Ok(w.write_all(&bytes)?))
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.write(name, |w| write_matrix_csv(m, w))
    }

    /// Writes `config.json` and `manifest.json`; call last.
    fn finish<A: Serialize>(mut self, command: &str, config: &A, seed: Option<u64>) -> Result<()> {
        let config_bytes = json_bytes(config)?;
        self.write("config.json", |w| Ok(w.write_all(&config_bytes)?))?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = serde_json::json!({
            "tool": "hankel-arma",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "config_sha256": hex::encode(Sha256::digest(&config_bytes)),
            "seed": seed,
            "outputs": self.files,
            "created_unix": created_unix,
        });
        let bytes = json_bytes(&manifest)?;
        fs::write(self.dir.join("manifest.json"), bytes)?;
        println!("{command}: wrote {} files to {}", self.files.len() + 1, self.dir.display());
        Ok(())
    }
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::read_csv(File::open(path)?)
}

fn run_simulate(a: &SimulateArgs, name: &str) -> Result<()> {
    let model = a.model.resolve()?;
    let traj = model.simulate(a.horizon, a.seed)?;
    let mut out = Outputs::create(&a.common.out)?;
    out.write("trajectory.csv", |w| traj.write_csv(w))?;
    out.write("model.json", |w| model.to_json(w))?;
    out.write("state_space.json", |w| model.to_state_space().with_initial_state_from(&traj)?.to_json(w))?;
    out.finish(name, a, Some(a.seed))
}

fn run_hankel(a: &HankelArgs, name: &str) -> Result<()> {
    let input = require_file(&a.input, "--input")?;
    let traj = read_trajectory(&input)?;
    let hs = build_hankel(&traj, a.t)?;
    let out = Outputs::create(&a.common.out)?;
    hs.write_dir(&out.dir)?;
    let mut out = out;
    out.files.extend(["X_past.csv", "X_future.csv", "E.csv", "hankel.json"].map(String::from));
    out.finish(name, a, traj.seed)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    t: usize,
    #[serde(rename = "T")]
    horizon: usize,
    /// `given`, `auto` or `penalized`.
    eta_source: &'static str,
    nu: Option<f64>,
    /// `false` when the calibrated level lies below the least-squares floor and
    /// the least-squares estimate is reported instead.
    feasible: bool,
    p_hat: usize,
    order_rule: OrderRule,
    #[serde(flatten)]
    solver: &'a SolverResult,
}

fn run_estimate(a: &EstimateArgs, name: &str) -> Result<()> {
    let input = require_file(&a.input, "--input")?;
    let traj = read_trajectory(&input)?;
    let hs = build_hankel(&traj, a.t)?;
    let (res, source, nu, feasible) = match (a.lambda, a.eta) {
        (Some(lambda), _) => (solve_nuclear(&hs, &a.solver.config(Target::Lambda(lambda)))?, "penalized", None, true),
        (None, EtaChoice::Value(eta)) => {
            (solve_constrained(&hs, &a.solver.config(Target::Eta(eta)))?, "given", None, true)
        }
        (None, EtaChoice::Auto) => {
            let model = a.model.resolve()?;
            let cfg = McConfig { replicates: a.calibration_replicates, seed: a.seed.seed, workers: a.seed.workers };
            let eta = calibrate_eta(&model, a.t, traj.horizon(), a.nu, 1.0, a.calibration_replicates, &cfg)?;
            match solve_constrained(&hs, &a.solver.config(Target::Eta(eta))) {
                Ok(res) => (res, "auto", Some(a.nu), true),
                Err(Error::Infeasible { .. }) => {
                    let mut res = solve_ls(&hs)?;
                    res.eta = Some(eta);
                    (res, "auto", Some(a.nu), false)
                }
                Err(e) => return Err(e),
            }
        }
    };
    let rule = a.order.rule();
    let report = EstimateReport {
        t: a.t,
        horizon: traj.horizon(),
        eta_source: source,
        nu,
        feasible,
        p_hat: select_order(&res.singular_values, rule),
        order_rule: rule,
        solver: &res,
    };
    let mut out = Outputs::create(&a.common.out)?;
    out.matrix("estimate.csv", &res.l_hat)?;
    out.json("estimate.json", &report)?;
    out.finish(name, a, Some(a.seed.seed))
}

fn run_realize(a: &RealizeArgs, name: &str) -> Result<()> {
    let input = require_file(&a.estimate, "--estimate")?;
    let l_hat = read_matrix_csv(File::open(input)?)?;
    let res = match a.p_hat {
        Some(p) => realize(&l_hat, p)?,
        None => realize_with_rule(&l_hat, a.order.rule())?,
    };
    let mut out = Outputs::create(&a.common.out)?;
    out.write("realization.json", |w| res.write_json(w))?;
    out.write("state_space.json", |w| res.model.to_json(w))?;
    out.finish(name, a, None)
}

fn run_bounds(a: &BoundsArgs, name: &str) -> Result<()> {
    let model = a.model.resolve()?;
    let xi = match a.xi {
        XiChoice::Value(v) => v,
        XiChoice::Optimize => 1.0,
    };
    let ctx = TheoryContext::from_model(&model, a.t, a.horizon, a.c, xi, a.nu)?;
    let rank = a.rank.unwrap_or_else(|| Svd::new(&ok_product(&model.to_state_space(), a.t)).rank(1e-10));
    let report = match a.xi {
        XiChoice::Optimize => lambda_bound_optimized(&ctx, rank, a.eta)?,
        XiChoice::Value(_) => lambda_bound(&ctx, rank, a.eta)?,
    };
    let mut out = Outputs::create(&a.common.out)?;
    out.write("bounds.json", |w| report.write_json(w))?;
    out.finish(name, a, None)
}

fn mc_config(replicates: usize, seed: &SeedArgs) -> McConfig {
    McConfig { replicates, seed: seed.seed, workers: seed.workers }
}

fn run_mc_sigmah(a: &McSigmahArgs, name: &str) -> Result<()> {
    let summary = mc_sigma_h(a.t, a.horizon, &mc_config(a.replicates, &a.seed))?;
    let mut out = Outputs::create(&a.common.out)?;
    out.json("sigma_h.json", &summary)?;
    out.matrix("sigma_h_cov.csv", &summary.covariance)?;
    out.finish(name, a, Some(a.seed.seed))
}

#[derive(Serialize)]
struct WidthReport {
    cone: ConeSource,
    estimate: hankel_arma::montecarlo::WidthEstimate,
    sandwich_holds_3se: bool,
    /// Closed-form bound at identity covariance, where the whitened directions are standard Gaussian.
    width_upper: f64,
    dimension_upper: f64,
    width_below_bound_3se: bool,
    dimension_below_bound_3se: bool,
}

fn run_mc_width(a: &McWidthArgs, name: &str) -> Result<()> {
    let cone = match a.cone {
        ConeSource::Random => DescentConeSpec::random(a.t, a.r, &mut stream_rng(a.seed.seed, CONE_STREAM))?,
        ConeSource::Model => {
            DescentConeSpec::from_matrix(&ok_product(&a.model.resolve()?.to_state_space(), a.t), 1e-10)?
        }
    };
    let est = mc_width(&cone, &mc_config(a.replicates, &a.seed))?;
    let cov = CovarianceModel::from_matrix(DMatrix::identity(a.t, a.t))?;
    let ctx = TheoryContext::new(&cov, 10 * a.t, a.c, 1.0, 1.0)?;
    let bound = width_bound(&ctx, cone.r)?;
    let report = WidthReport {
        cone: a.cone,
        sandwich_holds_3se: est.sandwich_holds(3.0),
        width_below_bound_3se: est.width <= bound.width_upper + 3.0 * est.width_se,
        dimension_below_bound_3se: est.dimension <= bound.dimension_upper + 3.0 * est.dimension_se,
        width_upper: bound.width_upper,
        dimension_upper: bound.dimension_upper,
        estimate: est,
    };
    let mut out = Outputs::create(&a.common.out)?;
    out.json("width.json", &report)?;
    out.finish(name, a, Some(a.seed.seed))
}

#[derive(Serialize)]
struct NormsReport {
    norms: hankel_arma::montecarlo::HNormsEstimate,
    op_mean_below_2sqrt_t: bool,
    second_moment_lhs: f64,
    second_moment_rhs: f64,
    chi_tails: Vec<hankel_arma::montecarlo::ChiTailEstimate>,
}

fn run_mc_norms(a: &McNormsArgs, name: &str) -> Result<()> {
    let cfg = mc_config(a.replicates, &a.seed);
    let norms = mc_h_norms(a.t, &cfg)?;
    let (lhs, rhs) = norms.concentration_sides(a.c);
    let chi_tails = if a.chi_samples == 0 {
        Vec::new()
    } else {
        a.chi_nu.iter().map(|&nu| mc_chi_tails(nu, a.chi_s, a.chi_u, a.chi_samples, &cfg)).collect::<Result<_>>()?
    };
    let report = NormsReport {
        op_mean_below_2sqrt_t: norms.op_mean <= norms.op_mean_bound,
        second_moment_lhs: lhs,
        second_moment_rhs: rhs,
        norms,
        chi_tails,
    };
    let mut out = Outputs::create(&a.common.out)?;
    out.json("norms.json", &report)?;
    out.finish(name, a, Some(a.seed.seed))
}

fn run_experiment(a: &ExperimentArgs, name: &str) -> Result<()> {
    let model = a.model.resolve()?;
    let opts = ExperimentOptions {
        c: a.c,
        xi: match a.xi {
            XiChoice::Optimize => None,
            XiChoice::Value(v) => Some(v),
        },
        order_rule: a.order.rule(),
        calibration_replicates: a.calibration_replicates,
        nuisance_scale: a.nuisance_scale,
        solver: a.solver.config(Target::Eta(0.0)),
    };
    let res = mc_estimation_experiment(&model, a.t, a.horizon, a.nu, &mc_config(a.replicates, &a.seed), &opts)?;
    let mut out = Outputs::create(&a.common.out)?;
    out.write("experiment.csv", |w| res.write_csv(w))?;
    out.write("summary.json", |w| res.write_summary_json(w))?;
    out.finish(name, a, Some(a.seed.seed))
}
