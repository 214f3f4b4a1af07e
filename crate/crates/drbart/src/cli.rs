//! Command-line front end: fit models, query stored draws, run synthetic
//! benchmarks, and spot-check the priors by Monte Carlo.
//!
//! Exit codes are part of the contract: 0 success, 2 flag/usage problems,
//! 3 unreadable or malformed input files, 4 runtime failures (sampling,
//! numerics, domain errors). Every failure prints a single `error: ...`
//! line to stderr so wrappers can parse it.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::StandardizedData;
use crate::io::{self, IoError};
use crate::predict::{self, PredictError, Predictor};
use crate::priors::{
    calibrate_a0, calibrate_sigma_mu, sample_leaf_scale_prior, sample_prior_tree,
    BartHyperParams, PriorError, Sigma0Spec, VarianceHyperParams,
};
use crate::sampler::{
    default_sigma0, run_chain, ChainConfig, LatentUpdate, SamplerError, Variant,
};
use crate::simbench::{self, DgpSpec, DgpVariant, SimError};
use crate::tree::SplitAxis;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) | CliError::Input(s) | CliError::Runtime(s) => write!(f, "{}", s),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PriorError> for CliError {
    fn from(e: PriorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "drbart",
    version,
    about = "Tree-ensemble conditional density regression",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model to CSV data and store posterior draws.
    Fit(FitArgs),
    /// Summarize the predictive density at one covariate point.
    Density(DensityArgs),
    /// Summarize predictive quantiles at one covariate point.
    Quantile(QuantileArgs),
    /// Draw a synthetic benchmark data set.
    Simulate(SimulateArgs),
    /// Score stored draws against the generator they were fitted to.
    Evaluate(EvaluateArgs),
    /// Monte Carlo sanity checks of the tree-shape and leaf-scale priors.
    PriorCheck(PriorCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    /// Constant noise scale.
    L,
    /// Noise scale driven by covariates only.
    Lh,
    /// Noise scale driven by covariates and the latent coordinate.
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::L => Variant::Homoscedastic,
            VariantArg::Lh => Variant::CovariateScale,
            VariantArg::Full => Variant::FullScale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LatentArg {
    Gibbs,
    Slice,
}

#[derive(Args)]
struct FitArgs {
    /// Training data CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Response column name.
    #[arg(long)]
    response: String,
    /// Covariate columns, comma separated; default: every other column.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Model the log of the response (requires positive responses).
    #[arg(long)]
    log_response: bool,
    /// Noise structure.
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    variant: VariantArg,
    /// Baseline noise scale: "auto" (half the residual scale of a linear
    /// fit, on the standardized scale) or an explicit number.
    #[arg(long, default_value = "auto")]
    sigma0: String,
    /// Inverse-gamma degrees of freedom for the noise variance
    /// (variant l only; requires --xi0).
    #[arg(long)]
    nu0: Option<f64>,
    /// Inverse-gamma scale anchor for the noise variance
    /// (variant l only; requires --nu0).
    #[arg(long)]
    xi0: Option<f64>,
    /// Mean ensemble size.
    #[arg(long, default_value_t = 250)]
    trees: usize,
    /// Variance ensemble size (heteroscedastic variants only).
    #[arg(long)]
    variance_trees: Option<usize>,
    /// Root split probability.
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    /// Depth penalty exponent.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Leaf-scale spread multiplier.
    #[arg(long, default_value_t = 2.0)]
    k: f64,
    /// Fewest observations per leaf.
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Central variance multiplier range used to set the leaf-scale
    /// concentration (heteroscedastic variants only).
    #[arg(long)]
    a0_range: Option<f64>,
    /// Latent-coordinate kernel.
    #[arg(long, value_enum, default_value_t = LatentArg::Gibbs)]
    latent: LatentArg,
    /// Recorded draws after burn-in.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Burn-in sweeps.
    #[arg(long, default_value_t = 1000)]
    burn: usize,
    /// Keep every thin-th sweep.
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base RNG stream; chain c uses stream + c.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Independent chains run concurrently; chain c writes
    /// <out>.chain<c>.<ext> when more than one.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Store per-observation latent coordinates in each draw.
    #[arg(long)]
    save_latents: bool,
    /// Output draw file (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DensityArgs {
    /// Stored draw file from `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Raw-scale covariate values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long, default_value_t = 512)]
    grid_points: usize,
    /// Lower grid end (raw scale); default: observed range widened by 25%.
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_max: Option<f64>,
    /// Credible band level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV: y, mean, lower, upper.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantileArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    /// Quantile levels in (0, 1), comma separated.
    #[arg(long, value_delimiter = ',')]
    s: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV: s, mean, lower, upper.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator: base, irrelevant14, gapx, or quadratic:<a>.
    #[arg(long)]
    dgp: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV with covariate columns and a response column y.
    #[arg(long)]
    out: PathBuf,
    /// Also tabulate the true conditional density at these covariate
    /// values (long CSV: x, y, density).
    #[arg(long, value_delimiter = ',')]
    truth_x: Option<Vec<f64>>,
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2001)]
    truth_points: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    draws: PathBuf,
    /// Generator the training data came from.
    #[arg(long)]
    dgp: String,
    /// Covariate values to score at.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.8])]
    x_probes: Vec<f64>,
    #[arg(long, default_value_t = 2001)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Held-out points for predictive coverage.
    #[arg(long, default_value_t = 1000)]
    test_n: usize,
    #[arg(long, default_value_t = 90210)]
    test_seed: u64,
    /// Output CSV: metric, x, value.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PriorCheckArgs {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 12345)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    variance_trees: usize,
    #[arg(long, default_value_t = 4.0)]
    a0_range: f64,
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments").to_string();
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    let result = match cli.cmd {
        Cmd::Fit(a) => fit(a),
        Cmd::Density(a) => density(a),
        Cmd::Quantile(a) => quantile(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::PriorCheck(a) => prior_check(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn chain_path(out: &Path, c: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        return out.to_path_buf();
    }
    match out.extension() {
        Some(ext) => out.with_extension(format!("chain{}.{}", c, ext.to_string_lossy())),
        None => out.with_extension(format!("chain{}", c)),
    }
}

/// Pure flag-consistency checks, run before any file is touched so that
/// usage mistakes beat missing-file errors. Returns an explicitly requested
/// fixed noise scale, if any.
fn validate_fit_flags(a: &FitArgs) -> Result<Option<f64>, CliError> {
    let variant: Variant = a.variant.into();
    if a.nu0.is_some() != a.xi0.is_some() {
        return Err(CliError::Usage("--nu0 and --xi0 must be given together".into()));
    }
    if variant != Variant::Homoscedastic {
        if a.nu0.is_some() {
            return Err(CliError::Usage(format!(
                "--nu0/--xi0 assume a constant noise scale; they conflict with --variant {}",
                if variant == Variant::CovariateScale { "lh" } else { "full" }
            )));
        }
    } else {
        if a.variance_trees.is_some() {
            return Err(CliError::Usage(
                "--variance-trees has no effect with --variant l".into(),
            ));
        }
        if a.a0_range.is_some() {
            return Err(CliError::Usage("--a0-range has no effect with --variant l".into()));
        }
    }
    if a.nu0.is_some() && a.sigma0 != "auto" {
        return Err(CliError::Usage(
            "--sigma0 conflicts with --nu0/--xi0; pick one way to set the noise scale".into(),
        ));
    }
    if a.chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    if a.trees == 0 {
        return Err(CliError::Usage("--trees must be at least 1".into()));
    }
    if a.thin == 0 {
        return Err(CliError::Usage("--thin must be at least 1".into()));
    }
    if a.nu0.is_some() || a.sigma0 == "auto" {
        return Ok(None);
    }
    let v: f64 = a.sigma0.parse().map_err(|_| {
        CliError::Usage(format!(
            "--sigma0 must be \"auto\" or a number, got {:?}",
            a.sigma0
        ))
    })?;
    Ok(Some(v))
}

fn build_chain_config(a: &FitArgs, data: &StandardizedData) -> Result<ChainConfig, CliError> {
    let explicit_sigma0 = validate_fit_flags(a)?;
    let variant: Variant = a.variant.into();
    let sigma0 = match (a.nu0, a.xi0) {
        (Some(nu0), Some(xi0)) => Sigma0Spec::InverseGamma { nu0, xi0 },
        _ => Sigma0Spec::Fixed(explicit_sigma0.unwrap_or_else(|| default_sigma0(data))),
    };
    let sigma_mu = calibrate_sigma_mu(a.k, a.trees)?;
    let hp = BartHyperParams {
        alpha: a.alpha,
        beta: a.beta,
        k: a.k,
        m: a.trees,
        sigma_mu,
        min_leaf: a.min_leaf,
        ..BartHyperParams::standard(a.trees)
    };
    let vhp = VarianceHyperParams {
        m_v: a.variance_trees.unwrap_or(100),
        a0: calibrate_a0(a.a0_range.unwrap_or(4.0))?,
    };
    Ok(ChainConfig {
        variant,
        hp,
        vhp,
        sigma0,
        latent: match a.latent {
            LatentArg::Gibbs => LatentUpdate::Gibbs,
            LatentArg::Slice => LatentUpdate::Slice,
        },
        iterations: a.iters,
        burn_in: a.burn,
        thin: a.thin,
        seed: a.seed,
        stream: a.stream,
        save_latents: a.save_latents,
        mh_log_bias: 0.0,
    })
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    validate_fit_flags(&a)?;
    let data = io::load_csv(&a.data, &a.response, a.covariates.as_deref(), a.log_response)?;
    let base = build_chain_config(&a, &data)?;
    let chains = a.chains;
    let results: Vec<Result<(usize, PathBuf, f64), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..chains)
            .map(|c| {
                let mut cfg = base.clone();
                cfg.stream = base.stream + c as u64;
                let data = &data;
                let path = chain_path(&a.out, c, chains);
                s.spawn(move || -> Result<(usize, PathBuf, f64), CliError> {
                    let posterior = run_chain(data, &cfg)?;
                    io::save_run_for(&path, &posterior, data)?;
                    let st = posterior.stats;
                    let proposed =
                        st.mean_birth_proposed + st.mean_death_proposed + st.mean_change_proposed;
                    let accept = if proposed > 0 {
                        (st.mean_birth_accepted + st.mean_death_accepted
                            + st.mean_change_accepted) as f64
                            / proposed as f64
                    } else {
                        0.0
                    };
                    Ok((posterior.draws.len(), path, accept))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    for r in results {
        let (n, path, accept) = r?;
        println!(
            "wrote {} draws to {} (mean-move acceptance {:.3})",
            n,
            path.display(),
            accept
        );
    }
    Ok(())
}

fn resolve_grid(
    pred: &Predictor<'_>,
    points: usize,
    y_min: Option<f64>,
    y_max: Option<f64>,
) -> Result<Vec<f64>, CliError> {
    if points < 2 {
        return Err(CliError::Usage("--grid-points must be at least 2".into()));
    }
    match (y_min, y_max) {
        (None, None) => Ok(pred.default_y_grid(points)),
        (Some(lo), Some(hi)) => {
            if !(lo < hi) {
                return Err(CliError::Usage(format!(
                    "--y-min {} must be below --y-max {}",
                    lo, hi
                )));
            }
            Ok((0..points)
                .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                .collect())
        }
        _ => Err(CliError::Usage("--y-min and --y-max must be given together".into())),
    }
}

fn density(a: DensityArgs) -> Result<(), CliError> {
    if !(a.level.is_finite() && (0.0..1.0).contains(&a.level)) {
        return Err(CliError::Usage(format!("--level {} must lie in [0, 1)", a.level)));
    }
    let run = io::load_run(&a.draws)?;
    let pred = run.predictor();
    let grid = resolve_grid(&pred, a.grid_points, a.y_min, a.y_max)?;
    let dg = pred.density_grid(&a.x, &grid)?;
    let (mean, band) = predict::summarize(&dg, a.level)?;
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| vec![grid[i], mean[i], band.lower[i], band.upper[i]])
        .collect();
    io::write_table(&a.out, &["y", "mean", "lower", "upper"], &rows)?;
    println!("wrote {} grid rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn quantile(a: QuantileArgs) -> Result<(), CliError> {
    if a.s.is_empty() {
        return Err(CliError::Usage("--s needs at least one level".into()));
    }
    for &s in &a.s {
        if !(s.is_finite() && s > 0.0 && s < 1.0) {
            return Err(CliError::Usage(format!(
                "quantile level {} must lie strictly inside (0, 1)",
                s
            )));
        }
    }
    if !(a.level.is_finite() && (0.0..1.0).contains(&a.level)) {
        return Err(CliError::Usage(format!("--level {} must lie in [0, 1)", a.level)));
    }
    let run = io::load_run(&a.draws)?;
    let pred = run.predictor();
    // rows are draws, columns are requested levels
    let mut matrix = vec![vec![0.0f64; a.s.len()]; pred.n_draws()];
    for (j, &s) in a.s.iter().enumerate() {
        let qs = pred.quantiles(&a.x, s)?;
        for (d, q) in qs.into_iter().enumerate() {
            matrix[d][j] = q;
        }
    }
    let band = predict::band(&matrix, a.level)?;
    let rows: Vec<Vec<f64>> = a
        .s
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let mean = matrix.iter().map(|r| r[j]).sum::<f64>() / matrix.len() as f64;
            vec![s, mean, band.lower[j], band.upper[j]]
        })
        .collect();
    io::write_table(&a.out, &["s", "mean", "lower", "upper"], &rows)?;
    println!("wrote {} quantile rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let variant: DgpVariant = a.dgp.parse()?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if a.truth_x.is_some() != a.truth_out.is_some() {
        return Err(CliError::Usage("--truth-x and --truth-out must be given together".into()));
    }
    let sim = simbench::sample(&DgpSpec { variant, n: a.n, seed: a.seed });
    let p = sim.x[0].len();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{}", j)).collect();
    header.push("y".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<f64>> = sim
        .x
        .iter()
        .zip(sim.y.iter())
        .map(|(x, &y)| {
            let mut r = x.clone();
            r.push(y);
            r
        })
        .collect();
    io::write_table(&a.out, &header_refs, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    if let (Some(xs), Some(tpath)) = (a.truth_x, a.truth_out) {
        let mut trows: Vec<Vec<f64>> = Vec::new();
        for &x in &xs {
            let f0 = simbench::mean_function(variant, x);
            let n = a.truth_points.max(2);
            let grid: Vec<f64> = (0..n)
                .map(|i| f0 - 30.0 + 38.0 * i as f64 / (n - 1) as f64)
                .collect();
            let dens = simbench::true_density(variant, x, &grid);
            for (g, d) in grid.iter().zip(dens.iter()) {
                trows.push(vec![x, *g, *d]);
            }
        }
        io::write_table(&tpath, &["x", "y", "density"], &trows)?;
        println!("wrote {} truth rows to {}", trows.len(), tpath.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let variant: DgpVariant = a.dgp.parse()?;
    if !(a.level.is_finite() && a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!(
            "--level {} must lie strictly inside (0, 1)",
            a.level
        )));
    }
    let run = io::load_run(&a.draws)?;
    let pred = run.predictor();
    let p = pred.x_maps.len();
    let expand = |x1: f64| -> Vec<f64> {
        // probes fix the relevant covariate; any irrelevant columns sit at
        // their central value
        let mut v = vec![0.5; p];
        v[0] = x1;
        v
    };
    let raw_lo = pred.y_map.min - 0.75 * pred.y_map.range;
    let raw_hi = pred.y_map.min + 1.75 * pred.y_map.range;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Input(e.to_string()))?;
    w.write_record(["metric", "x", "value"])
        .map_err(|e| CliError::Input(e.to_string()))?;
    for &x1 in &a.x_probes {
        let f0 = simbench::mean_function(variant, x1);
        let lo = (f0 - 30.0).min(raw_lo);
        let hi = (f0 + 8.0).max(raw_hi);
        let n = a.grid_points.max(2);
        let grid: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let truth = simbench::true_density(variant, x1, &grid);
        let fitted = pred.mean_density(&expand(x1), &grid)?;
        let w1 = simbench::wasserstein1(&grid, &fitted, &truth)?;
        let dg = pred.density_grid(&expand(x1), &grid)?;
        let (_, band) = predict::summarize(&dg, a.level)?;
        let covered = simbench::band_coverage(&band, &grid, &truth, a.level)?;
        w.write_record(["w1", &format!("{}", x1), &format!("{}", w1)])
            .map_err(|e| CliError::Input(e.to_string()))?;
        w.write_record([
            "band_covered",
            &format!("{}", x1),
            if covered { "1" } else { "0" },
        ])
        .map_err(|e| CliError::Input(e.to_string()))?;
    }
    if a.test_n > 0 {
        let test = simbench::sample(&DgpSpec { variant, n: a.test_n, seed: a.test_seed });
        let grid: Vec<f64> = {
            let lo = test.y.iter().cloned().fold(raw_lo, f64::min) - 1.0;
            let hi = test.y.iter().cloned().fold(raw_hi, f64::max) + 1.0;
            let n = a.grid_points.max(2);
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        let cov = simbench::predictive_coverage(&pred, &test.x, &test.y, &grid, a.level)?;
        w.write_record(["predictive_coverage", "", &format!("{}", cov)])
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    println!("wrote report to {}", a.out.display());
    Ok(())
}

fn prior_check(a: PriorCheckArgs) -> Result<(), CliError> {
    if a.samples < 1000 {
        return Err(CliError::Usage("--samples must be at least 1000".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut all_ok = true;
    let mut report = |ok: bool, name: &str, detail: String| {
        println!("{} - {} ({})", if ok { "ok" } else { "FAIL" }, name, detail);
        all_ok &= ok;
    };

    // tree-shape prior: depth-profile moments of the branching process
    let hp = BartHyperParams::standard(1);
    let axes = [SplitAxis::Covariate(0), SplitAxis::Latent];
    let mut stumps = 0usize;
    let mut depth1 = 0usize;
    let mut depth2 = 0usize;
    for _ in 0..a.samples {
        let t = sample_prior_tree(&mut rng, &hp, &axes)?;
        let depths = t.depths();
        if t.leaf_ids().len() == 1 {
            stumps += 1;
        }
        depth1 += depths.iter().filter(|&&d| d == 1).count();
        depth2 += depths.iter().filter(|&&d| d == 2).count();
    }
    let n = a.samples as f64;
    let p_stump = stumps as f64 / n;
    let se_stump = (0.05 * 0.95 / n).sqrt();
    report(
        (p_stump - 0.05).abs() < 4.0 * se_stump + 0.001,
        "single-leaf share",
        format!("{:.4} vs 0.05", p_stump),
    );
    // node counts per depth are 0 or 2 (depth 1) and 0, 2, or 4 (depth 2);
    // their per-tree variances are 0.19 and about 1.42
    let d1 = depth1 as f64 / n;
    report(
        (d1 - 1.9).abs() < 4.0 * (0.19f64 / n).sqrt() + 0.002,
        "expected depth-1 nodes",
        format!("{:.4} vs 1.9", d1),
    );
    let d2 = depth2 as f64 / n;
    report(
        (d2 - 0.9025).abs() < 4.0 * (1.42f64 / n).sqrt() + 0.002,
        "expected depth-2 nodes",
        format!("{:.4} vs 0.9025", d2),
    );

    // leaf-scale prior: moments of the log multiplier and the range the
    // product of one ensemble's multipliers should cover
    let a0 = calibrate_a0(a.a0_range)?;
    let conc = a0 * a.variance_trees as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..a.samples {
        let lt = sample_leaf_scale_prior(&mut rng, conc, conc)?.ln();
        sum += lt;
        sum_sq += lt * lt;
    }
    let mean_lt = sum / n;
    let var_lt = sum_sq / n - mean_lt * mean_lt;
    // asymptotic moments of the equal-mixture of log-gamma and its negative
    let psi1 = 1.0 / conc + 1.0 / (2.0 * conc * conc) + 1.0 / (6.0 * conc.powi(3));
    let delta = 1.0 / (2.0 * conc) + 1.0 / (12.0 * conc * conc);
    let var_exact = psi1 + delta * delta;
    report(
        mean_lt.abs() < 4.0 * (var_exact / n).sqrt() + 1e-4,
        "log leaf-scale mean",
        format!("{:.5} vs 0", mean_lt),
    );
    report(
        (var_lt / var_exact - 1.0).abs() < 0.05,
        "log leaf-scale variance",
        format!("{:.6} vs {:.6}", var_lt, var_exact),
    );
    let sums = (a.samples / 10).max(1000);
    let bound = (a.a0_range).ln();
    let mut inside = 0usize;
    for _ in 0..sums {
        let mut v = 0.0;
        for _ in 0..a.variance_trees {
            v += sample_leaf_scale_prior(&mut rng, conc, conc)?.ln();
        }
        if v.abs() < bound {
            inside += 1;
        }
    }
    let cov = inside as f64 / sums as f64;
    report(
        (cov - 0.9545).abs() < 0.012,
        "variance multiplier range coverage",
        format!(
            "{:.4} of products inside (1/{}, {})",
            cov, a.a0_range, a.a0_range
        ),
    );

    if all_ok {
        Ok(())
    } else {
        Err(CliError::Runtime("one or more prior checks failed".into()))
    }
}
