use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dyadperm::io::{
    freedman_diaconis, matrix_rows, parse_edge_list_str, parse_experiment_config, parse_matrix_csv, InputDigest, LabeledMatrix,
    ReportDocument, SCHEMA_VERSION,
};
use dyadperm::perm::RNG_ALGORITHM;
use dyadperm::regress::check_design_nondegenerate;
use dyadperm::sim::run_experiment;
use dyadperm::{
    cluster_robust_variance, fit_dyadic_ols, qap_estimates_with, run_mrqap, run_qap, wald_statistic, DyadDesign,
    Error, Eta1Correction, PermutationOptions, Statistic, Strategy, Subset,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dyadperm", version, about = "QAP and MRQAP permutation tests for dyadic network data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Permutation test of association between two networks.
    Qap(QapArgs),
    /// Permutation test of partial regression coefficients.
    Mrqap(MrqapArgs),
    /// Point estimates, variance estimates and Wald statistics without permutation.
    Fit(FitArgs),
    /// Run a simulation experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Print version, report schema and RNG identifiers.
    Version,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InputFormat {
    /// n × n comma-separated grid, optional labels.
    Matrix,
    /// `i,j,weight` lines.
    Edges,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CorrectionArg {
    Sen,
    Plain,
}

impl From<CorrectionArg> for Eta1Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::Sen => Eta1Correction::Sen,
            CorrectionArg::Plain => Eta1Correction::Plain,
        }
    }
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Format of every network file.
    #[arg(long, value_enum, default_value = "matrix")]
    format: InputFormat,
    /// Number of units for edge lists (defaults to the largest index or label count).
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include a Freedman–Diaconis histogram of the replicates or samples.
    #[arg(long)]
    histogram: bool,
    /// Include wall-clock seconds (the report is then no longer byte-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum QapStatisticArg {
    Plain,
    Studentized,
}

#[derive(Args, Debug)]
struct QapArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "studentized")]
    statistic: QapStatisticArg,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Variance convention for η̂₁; defaults to sen for n >= 8 and plain otherwise.
    #[arg(long, value_enum)]
    eta1_correction: Option<CorrectionArg>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MrqapStatisticArg {
    Coef,
    Wald,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StrategyArg {
    A,
    B,
    #[value(name = "eps-b")]
    EpsB,
    Eps,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::A => Strategy::PermuteOutcome,
            StrategyArg::B => Strategy::PermuteFocal,
            StrategyArg::EpsB => Strategy::PermuteResidualFocal,
            StrategyArg::Eps => Strategy::PermuteResidualOutcome,
        }
    }
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Outcome network.
    #[arg(long)]
    a: PathBuf,
    /// Focal regressor networks (repeat or comma-separate).
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    b: Vec<PathBuf>,
    /// Nuisance regressor networks.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    c: Vec<PathBuf>,
    #[arg(long, value_enum)]
    eta1_correction: Option<CorrectionArg>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args, Debug)]
struct MrqapArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, value_enum, default_value = "b")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "wald")]
    statistic: MrqapStatisticArg,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

/// Failure of a subcommand, mapped onto an exit code.
#[derive(Debug)]
struct Failure {
    context: String,
    error: Error,
}

type CliResult<T> = Result<T, Failure>;

trait Context<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T>;
}

impl<T> Context<T> for dyadperm::Result<T> {
    fn context(self, what: impl Into<String>) -> CliResult<T> {
        self.map_err(|error| Failure { context: what.into(), error })
    }
}

fn read_network(path: &Path, input: &InputArgs, known: Option<&[String]>) -> CliResult<LabeledMatrix> {
    let what = format!("reading {}", path.display());
    match input.format {
        InputFormat::Matrix => parse_matrix_csv(path).context(what),
        InputFormat::Edges => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
                .context(what.clone())?;
            parse_edge_list_str(&text, input.n, known).context(what)
        }
    }
}

fn network_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Networks read with a shared unit order; labelled inputs must agree on it.
struct Networks {
    labels: Option<Vec<String>>,
    items: Vec<(String, PathBuf, dyadperm::DyadMatrix)>,
}

fn read_networks(paths: &[(&str, &Path)], input: &InputArgs) -> CliResult<Networks> {
    let mut labels: Option<Vec<String>> = None;
    let mut items = Vec::new();
    for (role, path) in paths {
        let m = read_network(path, input, labels.as_deref())?;
        match (&labels, m.labels) {
            (None, l) => labels = l,
            (Some(first), Some(l)) if *first != l => {
                return Err(Failure {
                    context: format!("reading {}", path.display()),
                    error: Error::Config("unit labels differ from the first network".into()),
                })
            }
            _ => {}
        }
        items.push((role.to_string(), path.to_path_buf(), m.matrix));
    }
    Ok(Networks { labels, items })
}

fn digests(items: &[(String, PathBuf, dyadperm::DyadMatrix)]) -> CliResult<Vec<InputDigest>> {
    items
        .iter()
        .map(|(role, path, _)| InputDigest::of(role.clone(), path).context(format!("hashing {}", path.display())))
        .collect()
}

fn emit(mut doc: ReportDocument, output: &OutputArgs, started: Instant, samples: Option<&[f64]>) -> CliResult<()> {
    if output.histogram {
        doc.histogram = samples.and_then(freedman_diaconis);
    }
    if output.timing {
        doc.timing = Some(started.elapsed().as_secs_f64());
    }
    let text = doc.to_json().context("rendering report")?;
    match &output.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
            .context("writing report"),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_qap(args: QapArgs) -> CliResult<()> {
    let started = Instant::now();
    let nets = read_networks(&[("a", &args.a), ("b", &args.b)], &args.input)?;
    let (a, b) = (&nets.items[0].2, &nets.items[1].2);
    let n = a.n();
    let correction = args.eta1_correction.map_or(Eta1Correction::default_for(n), Into::into);
    let estimates = qap_estimates_with(a, b, correction).context("estimating association between a and b")?;
    let statistic = match args.statistic {
        QapStatisticArg::Plain => Statistic::Unstudentized,
        QapStatisticArg::Studentized => Statistic::Studentized,
    };
    let opts = PermutationOptions { n_reps: args.reps, seed: args.seed, correction };
    let report = run_qap(a, b, statistic, &opts).context("running QAP")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let result = json!({ "estimates": estimates, "permutation": report, "units": nets.labels });
    let doc = ReportDocument::new("qap", digests(&nets.items)?, &strip_nulls(result)).context("building report")?;
    emit(doc, &args.output, started, Some(&report.replicates))
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(map.into_iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k, strip_nulls(v))).collect()),
        other => other,
    }
}

fn read_design(args: &DesignArgs) -> CliResult<(DyadDesign, Networks, Vec<String>)> {
    let mut roles: Vec<(String, &Path)> = vec![("a".into(), args.a.as_path())];
    roles.extend(args.b.iter().enumerate().map(|(k, p)| (format!("b[{k}]"), p.as_path())));
    roles.extend(args.c.iter().enumerate().map(|(k, p)| (format!("c[{k}]"), p.as_path())));
    let refs: Vec<(&str, &Path)> = roles.iter().map(|(r, p)| (r.as_str(), *p)).collect();
    let nets = read_networks(&refs, &args.input)?;
    let p = args.b.len();
    let mats: Vec<_> = nets.items.iter().map(|x| x.2.clone()).collect();
    let design = DyadDesign::new(mats[0].clone(), mats[1..=p].to_vec(), mats[p + 1..].to_vec())
        .context("assembling design")?;
    check_design_nondegenerate(&design).context("checking design")?;
    let names = args.b.iter().chain(&args.c).map(|p| network_name(p)).collect();
    Ok((design, nets, names))
}

fn correction_for(args: &DesignArgs, n: usize) -> Eta1Correction {
    args.eta1_correction.map_or(Eta1Correction::default_for(n), Into::into)
}

fn cmd_mrqap(args: MrqapArgs) -> CliResult<()> {
    let started = Instant::now();
    let (design, nets, names) = read_design(&args.design)?;
    let correction = correction_for(&args.design, design.n());
    let statistic = match args.statistic {
        MrqapStatisticArg::Coef => Statistic::CoefNorm,
        MrqapStatisticArg::Wald => Statistic::Wald,
    };
    let fit = fit_dyadic_ols(&design, correction).context("fitting design")?;
    let opts = PermutationOptions { n_reps: args.reps, seed: args.seed, correction };
    let report = run_mrqap(&design, args.strategy.into(), statistic, &opts).context("running MRQAP")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let result = json!({
        "coefficients": coefficient_table(&fit, &names),
        "focal": &names[..design.p()],
        "permutation": report,
        "units": nets.labels,
    });
    let doc = ReportDocument::new("mrqap", digests(&nets.items)?, &strip_nulls(result)).context("building report")?;
    emit(doc, &args.output, started, Some(&report.replicates))
}

fn coefficient_table(fit: &dyadperm::DyadFit, names: &[String]) -> Value {
    let se = fit.std_errors();
    Value::Array(
        names
            .iter()
            .enumerate()
            .map(|(k, name)| json!({ "name": name, "estimate": fit.coef[k], "std_error": se[k], "focal": k < fit.p }))
            .collect(),
    )
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    let started = Instant::now();
    let (design, nets, names) = read_design(&args.design)?;
    let n = design.n();
    let correction = correction_for(&args.design, n);
    let fit = fit_dyadic_ols(&design, correction).context("fitting design")?;
    let partial = wald_statistic(&fit, Subset::Partial).context("computing focal Wald statistic")?;
    let full = wald_statistic(&fit, Subset::Full).context("computing joint Wald statistic")?;
    let lz = cluster_robust_variance(&design, &fit).context("computing cluster-robust variance")?;
    let k = design.p() + design.q();
    let lz_slopes = lz.view((1, 1), (k, k)).into_owned();
    let mut result = json!({
        "coefficients": coefficient_table(&fit, &names),
        "correction": correction.as_str(),
        "intercept": fit.intercept,
        "n": n,
        "sigma_hat": matrix_rows(&fit.sigma_hat),
        "v_hat": matrix_rows(&fit.v_hat),
        "wald_focal": partial,
        "wald_all": full,
        "cluster_robust": {
            "variance": matrix_rows(&lz),
        },
        "units": nets.labels,
    });
    if correction == Eta1Correction::Sen && n > 4 {
        // V̂ = 4n²(n-1) / {(n-2)(n-4)} · V̂_LZ on the slope block
        let nf = n as f64;
        let factor = 4.0 * nf * nf * (nf - 1.0) / ((nf - 2.0) * (nf - 4.0));
        let scaled = lz_slopes * factor;
        let diff = (&scaled - &fit.v_hat).abs().max();
        let rel = diff / fit.v_hat.abs().max().max(f64::MIN_POSITIVE);
        result["cluster_robust"]["scale_factor"] = json!(factor);
        result["cluster_robust"]["max_relative_difference"] = json!(rel);
    }
    let doc = ReportDocument::new("fit", digests(&nets.items)?, &strip_nulls(result)).context("building report")?;
    emit(doc, &args.output, started, None)
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let started = Instant::now();
    let config = parse_experiment_config(&args.config).context(format!("reading {}", args.config.display()))?;
    let summary = run_experiment(&config).context("running experiment")?;
    let inputs = vec![InputDigest::of("config", &args.config).context("hashing config")?];
    let result = json!({ "config": config, "summary": summary });
    let doc = ReportDocument::new("simulate", inputs, &result).context("building report")?;
    emit(doc, &args.output, started, Some(&summary.statistic_samples))
}

fn cmd_version() -> CliResult<()> {
    println!("dyadperm {}", env!("CARGO_PKG_VERSION"));
    println!("report schema {SCHEMA_VERSION}");
    println!("rng {RNG_ALGORITHM}");
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DYADPERM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("DYADPERM_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = match cli.command {
        Command::Qap(a) => cmd_qap(a),
        Command::Mrqap(a) => cmd_mrqap(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Version => cmd_version(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { context, error }) => {
            eprintln!("error: {context}: {error}");
            ExitCode::from(if error.is_numeric() { EXIT_NUMERIC } else { EXIT_DATA })
        }
    }
}
