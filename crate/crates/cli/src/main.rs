use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use recap_core::likelihood::{FitOptions, FitResult, GridStrategy};
use recap_core::selection::{RankingReport, RankingRow, SearchStrategy};
use recap_core::{
    covariate_matrix, cut_search, fit_model, io as rio, markov_correspondence_check, parse_model_list, rank_models,
    CaptureMatrix, Design, GeneratorSpec, ModelSpec, Quantifier, RecapError,
};

const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "recap", version, about = "Behavioural capture-recapture modelling", args_override_self = true)]
struct Cli {
    /// Worker threads for profile scans and replicates (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with the same fields as the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit the covariate matrix of the observed histories.
    Quantify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "g")]
        quantifier: Quantifier,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit one model by unconditional maximum likelihood.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: ModelSpec,
        #[command(flatten)]
        fit: FitArgs,
        /// Search strategy for cutsearch models.
        #[arg(long)]
        strategy: Option<SearchStrategy>,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Fit and rank several models by AIC.
    Select {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated model list.
        #[arg(long)]
        models: String,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Search optimal cutpoints of a covariate.
    Cutsearch {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "g")]
        quantifier: Quantifier,
        #[arg(long, default_value_t = 1)]
        cuts: usize,
        #[arg(long)]
        strategy: Option<SearchStrategy>,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Replicated simulation study.
    Simulate {
        /// Generating model.
        #[arg(long)]
        model: ModelSpec,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        /// All logit-scale coefficients, comma-separated (overrides alpha/beta).
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        coef: Option<Vec<f64>>,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        t: u32,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, env = "RECAP_SEED", default_value_t = 0)]
        seed: u64,
        /// Models fitted to every replicate (default: the generating model).
        #[arg(long)]
        candidates: Option<String>,
        /// Report destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory receiving each replicate's capture matrix and fits.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        format: FormatArgs,
    },
    /// Verify the interval / Markov-order correspondence exhaustively.
    Check {
        #[arg(long)]
        t: u32,
        #[arg(long, default_value_t = 1)]
        kmax: u32,
    },
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Upper end of the population-size grid.
    #[arg(long)]
    nupp: Option<u64>,
    #[arg(long, default_value = "coarse")]
    grid: GridStrategy,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

impl FitArgs {
    fn options(&self, search: Option<SearchStrategy>) -> Result<FitOptions, RecapError> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(RecapError::InvalidModel(format!("confidence level {} is not inside (0, 1)", self.level)));
        }
        Ok(FitOptions { n_upp: self.nupp, grid: self.grid, level: self.level, search })
    }
}

#[derive(Args, Debug)]
struct FormatArgs {
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
}

enum Outcome {
    Done,
    LikelihoodFailure,
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = Cli::parse_from(argv);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::LikelihoodFailure) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

/// Splices the fields of `--config FILE` in front of the explicit flags, so
/// that flags given on the command line win.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, RecapError> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].split_once('=') {
        Some((_, p)) => p.to_string(),
        None => argv.get(pos + 1).cloned().ok_or_else(|| RecapError::InvalidModel("--config needs a file".into()))?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| RecapError::Io(format!("{path}: {e}")))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text)? else {
        return Err(RecapError::InvalidModel(format!("{path}: config must be a JSON object")));
    };
    let mut rest: Vec<String> = argv[1..].to_vec();
    let skip = if argv[pos].contains('=') { 1 } else { 2 };
    rest.drain(pos - 1..pos - 1 + skip);

    let subcommands = ["quantify", "fit", "select", "cutsearch", "simulate", "check"];
    let mut out = vec![argv[0].clone()];
    let sub_pos = rest.iter().position(|a| subcommands.contains(&a.as_str()));
    let (before, after): (Vec<String>, Vec<String>) = match sub_pos {
        Some(i) => (rest[..=i].to_vec(), rest[i + 1..].to_vec()),
        None => match map.get("command").and_then(Value::as_str) {
            Some(c) => {
                let mut b = rest.clone();
                b.push(c.to_string());
                (b, Vec::new())
            }
            None => return Err(RecapError::InvalidModel("no subcommand given on the command line or in config".into())),
        },
    };
    out.extend(before);
    for (key, value) in &map {
        if key == "command" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(value_text).collect();
                out.push(format!("{flag}={}", joined.join(",")));
            }
            v => out.push(format!("{flag}={}", value_text(v))),
        }
    }
    out.extend(after);
    Ok(out)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn read_input(path: &Path) -> Result<CaptureMatrix, RecapError> {
    rio::read_capture_file(path).map_err(|e| match e {
        RecapError::Parse { line, msg } => RecapError::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, RecapError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| RecapError::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn single_row_report(fit: FitResult<f64>) -> RankingReport<f64> {
    RankingReport { rows: vec![RankingRow { spec: fit.spec.clone(), label: fit.model.clone(), fit: Some(fit), error: None }] }
}

fn print_fit(fit: &FitResult<f64>, json: bool) -> Result<(), RecapError> {
    let mut out = sink(None)?;
    if json {
        writeln!(out, "{}", fit.to_json()?)?;
    } else {
        single_row_report(fit.clone()).write_csv(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn warn_fit(fit: &FitResult<f64>) {
    if !fit.empty_classes.is_empty() {
        eprintln!("warning: {}: classes {:?} have no trials", fit.model, fit.empty_classes);
    }
    if fit.failure {
        eprintln!("warning: {}: likelihood failure (profile still increasing at N_upp = {})", fit.model, fit.n_upp);
    }
}

fn run(command: Command) -> Result<Outcome, RecapError> {
    match command {
        Command::Quantify { input, quantifier, output } => {
            let data = read_input(&input)?;
            let z = covariate_matrix(&data, quantifier, data.m() as u64)?;
            let mut out = sink(output.as_deref())?;
            rio::write_covariate_csv(&z, &mut out)?;
            out.flush()?;
            Ok(Outcome::Done)
        }
        Command::Fit { input, model, fit, strategy, format } => {
            let data = read_input(&input)?;
            let result = fit_model::<f64>(&data, &model, &fit.options(strategy)?)?;
            warn_fit(&result);
            print_fit(&result, format.json)?;
            Ok(if result.failure { Outcome::LikelihoodFailure } else { Outcome::Done })
        }
        Command::Select { input, models, fit, format } => {
            let data = read_input(&input)?;
            let specs = parse_model_list(&models)?;
            let report = rank_models::<f64>(&data, &specs, &fit.options(None)?)?;
            for row in &report.rows {
                match (&row.fit, &row.error) {
                    (Some(f), _) => warn_fit(f),
                    (None, Some(e)) => eprintln!("warning: {}: {e}", row.label),
                    _ => {}
                }
            }
            let mut out = sink(None)?;
            if format.json {
                writeln!(out, "{}", report.to_json()?)?;
            } else {
                report.write_csv(&mut out)?;
            }
            out.flush()?;
            Ok(Outcome::Done)
        }
        Command::Cutsearch { input, quantifier, cuts, strategy, fit, format } => {
            let data = read_input(&input)?;
            let strategy = strategy.unwrap_or_else(|| SearchStrategy::default_for(cuts));
            let res = cut_search::<f64>(&data, quantifier, cuts, strategy, &fit.options(Some(strategy))?)?;
            warn_fit(&res.fit);
            let mut out = sink(None)?;
            if format.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&res)?)?;
            } else {
                let mut buf = Vec::new();
                single_row_report(res.fit.clone()).write_csv(&mut buf)?;
                let text = String::from_utf8(buf).expect("csv is utf-8");
                let mut lines = text.lines();
                let fractions: Vec<String> = res.cutpoints.iter().map(|c| format!("{}/{}", c.numer(), c.denom())).collect();
                let decimals: Vec<String> =
                    res.cutpoints.iter().map(|c| format!("{:.4}", *c.numer() as f64 / *c.denom() as f64)).collect();
                writeln!(out, "{},cutpoints,cutpoints_decimal", lines.next().unwrap_or_default())?;
                writeln!(out, "{},{},{}", lines.next().unwrap_or_default(), fractions.join(" "), decimals.join(" "))?;
            }
            out.flush()?;
            Ok(if res.fit.failure { Outcome::LikelihoodFailure } else { Outcome::Done })
        }
        Command::Simulate { model, alpha, beta, coef, n, t, k, seed, candidates, out, dump, fit, format } => {
            let coefficients = generator_coefficients(&model, t, alpha, beta, coef)?;
            let spec = GeneratorSpec { model: model.clone(), coefficients, n_true: n, t, seed };
            let candidates = match candidates {
                Some(list) => parse_model_list(&list)?,
                None => vec![model],
            };
            let opts = fit.options(None)?;
            let (report, reps) = recap_core::run_trial::<f64>(&spec, &candidates, k, seed, &opts)?;
            if let Some(dir) = dump {
                dump_replicates(&dir, &spec, &reps, &candidates)?;
            }
            let mut w = sink(out.as_deref())?;
            if format.json {
                writeln!(w, "{}", report.to_json()?)?;
            } else {
                report.write_csv(&mut w)?;
            }
            w.flush()?;
            Ok(Outcome::Done)
        }
        Command::Check { t, kmax } => {
            if !(2..=16).contains(&t) {
                return Err(RecapError::InvalidPartition(format!("check needs 2 <= t <= 16, got {t}")));
            }
            if kmax == 0 || kmax >= t {
                return Err(RecapError::InvalidPartition(format!("check needs 1 <= kmax < t, got {kmax}")));
            }
            let mut all = true;
            println!("k,t,histories,result");
            for k in 1..=kmax {
                let r = markov_correspondence_check(k, t)?;
                all &= r.passed;
                println!("{},{},{},{}", r.k, r.t, r.histories_checked, if r.passed { "pass" } else { "FAIL" });
                if let Some(c) = r.counterexample {
                    eprintln!("k = {k}: {c}");
                }
            }
            if all {
                Ok(Outcome::Done)
            } else {
                Err(RecapError::InvalidPartition("correspondence check failed".into()))
            }
        }
    }
}

/// Logit-scale generator coefficients: `--coef` verbatim, otherwise
/// `[alpha, beta]` for linear models, `[alpha]` for one-class models and
/// `[alpha, alpha + beta]` for two-class partitions.
fn generator_coefficients(
    model: &ModelSpec,
    t: u32,
    alpha: Option<f64>,
    beta: Option<f64>,
    coef: Option<Vec<f64>>,
) -> Result<Vec<f64>, RecapError> {
    if let Some(c) = coef {
        return Ok(c);
    }
    let design = model.design(t).map_err(|e| RecapError::InvalidGenerator(e.to_string()))?;
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| RecapError::InvalidGenerator(format!("--{name} (or --coef) is required for {}", model.label())))
    };
    match (design, design_params(model, t)?) {
        (Design::Linear(_), _) => Ok(vec![need("alpha", alpha)?, need("beta", beta)?]),
        (_, 1) => Ok(vec![need("alpha", alpha)?]),
        (_, 2) => {
            let a = need("alpha", alpha)?;
            Ok(vec![a, a + need("beta", beta)?])
        }
        (_, d) => Err(RecapError::InvalidGenerator(format!("{} has {d} coefficients; pass them with --coef", model.label()))),
    }
}

fn design_params(model: &ModelSpec, t: u32) -> Result<usize, RecapError> {
    Ok(model.params(t)? - 1)
}

fn dump_replicates(
    dir: &Path,
    spec: &GeneratorSpec,
    reps: &[recap_core::Replicate64],
    candidates: &[ModelSpec],
) -> Result<(), RecapError> {
    std::fs::create_dir_all(dir).map_err(|e| RecapError::Io(format!("{}: {e}", dir.display())))?;
    for rep in reps {
        let data = recap_core::generate(&GeneratorSpec { seed: rep.seed, ..spec.clone() })?;
        let stem = dir.join(format!("replicate_{:04}", rep.seed ^ spec.seed));
        let mut csv = BufWriter::new(
            File::create(stem.with_extension("csv")).map_err(|e| RecapError::Io(format!("{}: {e}", stem.display())))?,
        );
        rio::write_capture_csv(&data, &mut csv)?;
        csv.flush()?;
        let fits: Vec<Value> = candidates
            .iter()
            .zip(&rep.fits)
            .map(|(c, f)| serde_json::json!({ "model": c.to_string(), "fit": f }))
            .collect();
        let record = serde_json::json!({ "seed": rep.seed, "m": rep.m, "winner": rep.winner, "fits": fits });
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(())
}
