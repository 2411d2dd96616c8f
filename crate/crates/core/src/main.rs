use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use smgp::harness::config::ExperimentConfig;
use smgp::harness::data::load_csv;
use smgp::harness::experiment::{
    compare_csv, cross_validate, fit_model, load_data, predictions_csv, sweep_csv, trace_csv,
    write_cv, write_json, write_text, CompareRow, SweepRow,
};
use smgp::harness::metrics::{score_points, summarize, Metrics};
use smgp::inference::Algorithm;
use smgp::{Error, Result};

#[derive(Parser)]
#[command(name = "smgp", version, about = "Sparse Markovian GP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for data generation and fold rotation.
    #[arg(long)]
    seed: Option<u64>,
    /// cvi, pep, pl or eks.
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on all data; write parameters, trace and in-sample predictions.
    Fit(Common),
    /// Train on all data and predict at the inputs of a test CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        /// CSV with header x[,r1..rp],y.
        #[arg(long)]
        test: PathBuf,
    },
    /// k-fold cross-validation.
    Evaluate(Common),
    /// Cross-validate several algorithms on the same folds.
    Compare(Common),
    /// Cross-validate over a range of inducing counts.
    SweepM(Common),
}

fn algorithm_override(base: &Algorithm, c: &Common) -> Result<Algorithm> {
    let alg = match c.algorithm.as_deref() {
        None => base.clone(),
        Some("cvi") => Algorithm::Cvi { rho: 1.0 },
        Some("pep") => Algorithm::Pep {
            alpha: 1.0,
            parallel: true,
            damping: None,
        },
        Some("pl") => Algorithm::Pl { damping: 1.0 },
        Some("eks") => Algorithm::Eks { damping: 1.0 },
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown algorithm `{other}` (cvi, pep, pl, eks)"
            )))
        }
    };
    let alg = match alg {
        Algorithm::Cvi { rho } => Algorithm::Cvi {
            rho: c.rho.unwrap_or(rho),
        },
        Algorithm::Pep {
            alpha,
            parallel,
            damping,
        } => Algorithm::Pep {
            alpha: c.alpha.unwrap_or(alpha),
            parallel,
            damping,
        },
        other => other,
    };
    alg.validate()?;
    Ok(alg)
}

fn setup(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.data.seed = Some(seed);
        cfg.train.seed = seed;
    }
    cfg.algorithm = algorithm_override(&cfg.algorithm, c)?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok((cfg, out))
}

#[derive(Serialize)]
struct FitSummary {
    schema_version: u32,
    algorithm: String,
    likelihood: String,
    n: usize,
    m: usize,
    iterations: usize,
    final_objective: f64,
    params: std::collections::BTreeMap<String, f64>,
    metrics: Metrics,
}

fn fit_and_report(common: &Common, test: Option<&PathBuf>) -> Result<()> {
    let (cfg, out) = setup(common)?;
    let data = load_data(&cfg)?;
    let fitted = fit_model(&cfg, &cfg.algorithm, &data, cfg.inducing.m, false)?;
    let target = match test {
        Some(p) => load_csv(p, Some(&cfg.likelihood))?,
        None => data.clone(),
    };
    let preds = fitted.predict(&target)?;
    let scores = score_points(&cfg.likelihood, &preds, &target.y)?;
    let rows = smgp::harness::experiment::PredictionRow::batch(0, &target, &preds, &scores);
    let summary = FitSummary {
        schema_version: smgp::harness::config::SCHEMA_VERSION,
        algorithm: cfg.algorithm.label(),
        likelihood: cfg.likelihood.name().into(),
        n: data.len(),
        m: cfg.inducing.m,
        iterations: fitted.result.trace.len(),
        final_objective: fitted.result.trace.last().map_or(f64::NAN, |t| t.objective),
        params: fitted.params(),
        metrics: summarize(&cfg.likelihood, &scores, &target.y),
    };
    let name = if test.is_some() {
        "predict.json"
    } else {
        "fit.json"
    };
    write_json(&out.join(name), &summary)?;
    write_text(
        &out.join("trace.csv"),
        &trace_csv(&[(0, &fitted.result.param_names, &fitted.result.trace)]),
    )?;
    write_text(&out.join("predictions.csv"), &predictions_csv(&rows))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).unwrap_or_default()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => fit_and_report(&c, None),
        Command::Predict { common, test } => fit_and_report(&common, Some(&test)),
        Command::Evaluate(c) => {
            let (cfg, out) = setup(&c)?;
            let data = load_data(&cfg)?;
            let cv = cross_validate(&cfg, &cfg.algorithm, &data, cfg.inducing.m, false)?;
            write_cv(&out, &cv)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cv.summary).unwrap_or_default()
            );
            Ok(())
        }
        Command::Compare(c) => {
            let (cfg, out) = setup(&c)?;
            let data = load_data(&cfg)?;
            let mut rows = Vec::new();
            for alg in cfg.compare_algorithms() {
                let cv = cross_validate(&cfg, &alg, &data, cfg.inducing.m, false)?;
                write_cv(&out.join(alg.label()), &cv)?;
                rows.push(CompareRow::from(&cv.summary));
            }
            write_json(&out.join("compare.json"), &rows)?;
            let table = compare_csv(&rows);
            write_text(&out.join("compare.csv"), &table)?;
            print!("{table}");
            Ok(())
        }
        Command::SweepM(c) => {
            let (cfg, out) = setup(&c)?;
            let data = load_data(&cfg)?;
            let square = cfg.spatial.is_some();
            let mut rows = Vec::new();
            for m in cfg.sweep_values() {
                let cv = cross_validate(&cfg, &cfg.algorithm, &data, m, square)?;
                write_cv(&out.join(format!("m{m}")), &cv)?;
                rows.push(SweepRow {
                    m,
                    nlml: cv.summary.train_nlml.mean,
                    nlpd: cv.summary.nlpd.mean,
                    error_rate: cv.summary.error_rate.map(|e| e.mean),
                });
            }
            write_json(&out.join("sweep_m.json"), &rows)?;
            let table = sweep_csv(&rows);
            write_text(&out.join("sweep_m.csv"), &table)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body =
                serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
