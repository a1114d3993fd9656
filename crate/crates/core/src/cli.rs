//! The `mixmin` command-line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors. All
//! randomness derives from `--seed` (default 0).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;

use crate::baselines::{
    grid_argmin, grid_search_with_cap, random_search, regmix_lite_fit, regmix_lite_select,
    resolution_to_denominator, sample_uniform_simplex, static_mixtures, DEFAULT_GRID_CAP,
};
use crate::error::Error;
use crate::io::{
    default_manifest_path, load_predictions, load_weights, read_json, resample_plan, save_weights,
    split_target, write_atomic, write_json, write_predictions, ProxySpec, ResamplePolicy, SolverEcho,
    SynthSpec, WeightsFile,
};
use crate::objectives::{objective, PredictionMatrix};
use crate::simplex::{MixtureWeights, INTERNAL_TOL};
use crate::solver::{mixmin_fit, sampled_matrix, SolverConfig, SolverTrace};
use crate::synthworld::{
    dm_oracle, gen_world, rng_from_seed, sample_source, sample_target, train_empirical_proxy, CategoricalWorld,
};

#[derive(Debug, Parser)]
#[command(name = "mixmin", version, about = "Data-mixture weights by ensemble risk minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit mixture weights on a train split of the target predictions.
    Fit(FitArgs),
    /// Select weights with a baseline method.
    Baseline(BaselineArgs),
    /// Evaluate saved weights on a predictions table.
    Eval(EvalArgs),
    /// Generate a synthetic world and a sampled predictions table.
    Synth(SynthArgs),
    /// Convert weights into per-source sample counts.
    Resample(ResampleArgs),
    /// Exact mixing objective of a synthetic world.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct PredictionsArgs {
    /// Predictions table (CSV).
    #[arg(long)]
    predictions: PathBuf,
    /// Manifest (JSON); defaults to manifest.json beside the table.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl PredictionsArgs {
    fn load(&self) -> Result<PredictionMatrix, CliError> {
        let manifest = self
            .manifest
            .clone()
            .unwrap_or_else(|| default_manifest_path(&self.predictions));
        Ok(load_predictions(&self.predictions, &manifest)?)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: PredictionsArgs,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Fraction of target samples used for fitting; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-step objective, gradient norm and weights (CSV).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Random,
    Grid,
    RegmixLite,
    Natural,
    Balanced,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Grid => "grid",
            Method::RegmixLite => "regmix-lite",
            Method::Natural => "natural",
            Method::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Random search: candidates drawn. RegMix-lite: mixtures observed
    /// (raised to P + 1 if smaller).
    #[arg(long, default_value_t = 7)]
    candidates: usize,
    /// RegMix-lite: candidates scored by the fitted surrogate.
    #[arg(long, default_value_t = 10_000)]
    search_candidates: usize,
    /// Grid spacing, of the form 1/m.
    #[arg(long, default_value_t = 0.01)]
    resolution: f64,
    /// Source sizes for the natural mixture, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
    /// Source names when no predictions are given, comma separated.
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    input: PredictionsArgs,
    /// Re-create the train/held-out split used by `fit`.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ResampleArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    budget: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Deterministic)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Deterministic,
    Multinomial,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("query").required(true).args(["weights", "grid_resolution"])))]
struct OracleArgs {
    /// World dump written by `synth`.
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    grid_resolution: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

/// Runs the tool on `argv` (program name first), writing results to `out` and
/// diagnostics to `err`. Returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(a, out),
        Command::Baseline(a) => baseline(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Resample(a) => resample(a, out),
        Command::Oracle(a) => oracle(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Data(Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn print_weights(out: &mut dyn Write, w: &MixtureWeights) -> Result<(), CliError> {
    for (id, v) in w.source_ids().iter().zip(w.values()) {
        writeln!(out, "weight\t{id}\t{v}").map_err(out_err)?;
    }
    Ok(())
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let m = a.input.load()?;
    let (train, test) = split_target(&m, a.split, a.seed)?;
    let config = SolverConfig {
        eta: a.eta,
        steps: a.steps,
        seed: a.seed,
        record_trace: a.trace_out.is_some(),
    };
    let result = mixmin_fit(&train, &config)?;
    let heldout = objective(&test, &result.weights)?;

    let mut file = WeightsFile::new("mixmin", &result.weights);
    file.loss_kind = Some(m.loss_kind());
    file.solver = Some(SolverEcho::from(&config));
    file.seed = Some(a.seed);
    file.objective = Some(result.objective);
    file.heldout_objective = Some(heldout);
    save_weights(&a.out, &file)?;
    if let Some(path) = &a.trace_out {
        write_trace(path, m.source_ids(), &result.trace)?;
    }
    writeln!(out, "train_objective\t{}", result.objective).map_err(out_err)?;
    writeln!(out, "heldout_objective\t{heldout}").map_err(out_err)?;
    print_weights(out, &result.weights)
}

fn write_trace(path: &Path, sources: &[String], trace: &SolverTrace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "objective".into(), "grad_max_norm".into()];
    header.extend(sources.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (i, s) in trace.steps.iter().enumerate() {
        let mut rec = vec![i.to_string(), s.objective.to_string(), s.grad_max_norm.to_string()];
        rec.extend(s.weights.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    write_atomic(path, &w.into_inner().expect("in-memory flush"))?;
    Ok(())
}

fn baseline(a: BaselineArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let matrix = match &a.predictions {
        Some(p) => Some(
            PredictionsArgs {
                predictions: p.clone(),
                manifest: a.manifest.clone(),
            }
            .load()?,
        ),
        None => None,
    };
    let need_matrix = || {
        matrix
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("--method {} requires --predictions", a.method.name())))
    };
    let source_ids: Vec<String> = match (&matrix, &a.sources) {
        (Some(m), _) => m.source_ids().to_vec(),
        (None, Some(s)) => s.clone(),
        (None, None) => match &a.sizes {
            Some(sizes) => (0..sizes.len()).map(|i| format!("source_{i}")).collect(),
            None => return Err(CliError::Usage("give --predictions or --sources".into())),
        },
    };

    let weights = match a.method {
        Method::Random => random_search(need_matrix()?, a.candidates, a.seed)?.0,
        Method::Grid => {
            let denom = resolution_to_denominator(a.resolution)?;
            grid_search_with_cap(need_matrix()?, denom, DEFAULT_GRID_CAP)?.0
        }
        Method::RegmixLite => {
            let m = need_matrix()?;
            let n_obs = a.candidates.max(m.n_sources() + 1);
            let mut rng = rng_from_seed(a.seed);
            let observations = (0..n_obs)
                .map(|_| {
                    let w = MixtureWeights::new(
                        m.source_ids(),
                        sample_uniform_simplex(m.n_sources(), &mut rng),
                        INTERNAL_TOL,
                    )?;
                    let loss = objective(m, &w)?;
                    Ok((w, loss))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let surrogate = regmix_lite_fit(&observations)?;
            regmix_lite_select(&surrogate, a.search_candidates, a.seed.wrapping_add(1))?
        }
        Method::Natural => {
            let sizes = a
                .sizes
                .as_ref()
                .ok_or_else(|| CliError::Usage("--method natural requires --sizes".into()))?;
            static_mixtures(&source_ids, sizes)?.0
        }
        Method::Balanced => MixtureWeights::uniform(&source_ids)?,
    };

    let mut file = WeightsFile::new(a.method.name(), &weights);
    if matches!(a.method, Method::Random | Method::RegmixLite) {
        file.seed = Some(a.seed);
    }
    if let Some(m) = &matrix {
        let v = objective(m, &weights)?;
        file.loss_kind = Some(m.loss_kind());
        file.objective = Some(v);
        writeln!(out, "objective\t{v}").map_err(out_err)?;
    }
    save_weights(&a.out, &file)?;
    print_weights(out, &weights)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, weights) = load_weights(&a.weights)?;
    let m = a.input.load()?;
    if weights.source_ids() != m.source_ids() {
        return Err(CliError::Data(Error::invalid(format!(
            "weights sources {:?} do not match predictions sources {:?}",
            weights.source_ids(),
            m.source_ids()
        ))));
    }
    match a.split {
        Some(frac) => {
            let (train, test) = split_target(&m, frac, a.seed)?;
            writeln!(out, "train_objective\t{}", objective(&train, &weights)?).map_err(out_err)?;
            writeln!(out, "heldout_objective\t{}", objective(&test, &weights)?).map_err(out_err)?;
        }
        None => {
            writeln!(out, "objective\t{}", objective(&m, &weights)?).map_err(out_err)?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec: SynthSpec = read_json(&a.spec)?;
    if spec.target_samples == 0 {
        return Err(CliError::Data(Error::invalid("target_samples must be at least 1")));
    }
    let mut seeds = rng_from_seed(a.seed);
    let world = gen_world(&spec.world, seeds.next_u64())?;
    let target_seed = seeds.next_u64();
    let proxies = match spec.proxies {
        ProxySpec::Exact => world.sources.clone(),
        ProxySpec::Trained { samples, alpha } => (0..world.n_sources())
            .map(|p| {
                let draws = sample_source(&world, p, samples, seeds.next_u64())?;
                train_empirical_proxy(&draws, world.alphabet_size(), alpha)
            })
            .collect::<Result<Vec<_>, Error>>()?,
    };
    let samples = sample_target(&world, spec.target_samples, target_seed)?;
    let matrix = sampled_matrix(&samples, &proxies, &world.source_ids)?;

    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let world_path = a.out_dir.join("world.json");
    let pred_path = a.out_dir.join("predictions.csv");
    let manifest_path = a.out_dir.join("manifest.json");
    write_json(&world_path, &world)?;
    write_predictions(&matrix, &pred_path, &manifest_path)?;
    for p in [&world_path, &pred_path, &manifest_path] {
        writeln!(out, "wrote\t{}", p.display()).map_err(out_err)?;
    }
    Ok(())
}

fn resample(a: ResampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, weights) = load_weights(&a.weights)?;
    let policy = match a.policy {
        PolicyArg::Deterministic => ResamplePolicy::Deterministic,
        PolicyArg::Multinomial => ResamplePolicy::Multinomial,
    };
    let plan = resample_plan(&weights, a.budget, policy, a.seed)?;
    write_json(&a.out, &plan)?;
    for alloc in &plan.allocations {
        writeln!(out, "count\t{}\t{}", alloc.source, alloc.count).map_err(out_err)?;
    }
    Ok(())
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let world: CategoricalWorld = read_json(&a.world)?;
    let world = CategoricalWorld::new(world.source_ids, world.sources, world.target)?;
    match (&a.weights, a.grid_resolution) {
        (Some(path), _) => {
            let (_, weights) = load_weights(path)?;
            if weights.source_ids() != world.source_ids.as_slice() {
                return Err(CliError::Data(Error::invalid("weights sources do not match the world")));
            }
            writeln!(out, "dm_objective\t{}", dm_oracle(&world, &weights)?).map_err(out_err)?;
        }
        (None, Some(res)) => {
            let denom = resolution_to_denominator(res)?;
            let best = grid_argmin(&world.source_ids, denom, DEFAULT_GRID_CAP, |w| dm_oracle(&world, w))?;
            writeln!(out, "dm_objective\t{}", best.objective).map_err(out_err)?;
            print_weights(out, &best.weights)?;
        }
        (None, None) => return Err(CliError::Usage("give --weights or --grid-resolution".into())),
    }
    Ok(())
}
