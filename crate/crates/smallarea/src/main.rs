//! Thin command-line front end over the `smallarea` library.
//!
//! Exit codes: 0 success, 2 input/validation failure, 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use smallarea::cli::{
    ingest_area_csv, ingest_unit_csv, run_fit, run_unit_fit, ColumnMap, Measure, ModelKind,
    OutputFormat, RunConfig,
};
use smallarea::fay_herriot::FhMethod;
use smallarea::intervals::{coverage_simulator, CoverageConfig, CoverageDesign, IntervalMode};
use smallarea::unit_level::HbPrior;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "smallarea",
    version,
    about = "Small-area estimation: shrinkage fits, uncertainty measures, calibrated intervals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// variance-component estimator: fh-moment | pr-anova | ml | reml
    #[arg(long, default_value = "fh-moment")]
    method: String,
    /// uncertainty measures, comma separated subset of pr,morris,hb
    #[arg(long, default_value = "pr")]
    measures: String,
    /// nominal error rate for intervals
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// interval construction: naive | smith (area model only)
    #[arg(long)]
    interval_mode: Option<String>,
    /// relative quadrature tolerance for posterior functionals
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// root seed for any randomized component
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output format: csv | json
    #[arg(long, default_value = "csv")]
    format: String,
    /// do not prepend an intercept column
    #[arg(long)]
    no_intercept: bool,
    /// write output here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the area-level model to a CSV of (area_id, y, covariates…, V).
    Fit {
        /// input CSV path, or - for standard input
        input: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Fit the unit-level nested-error model from unit and area CSVs.
    UnitFit {
        /// unit records: area_id, y, x1..xp
        units: String,
        /// area frames: area_id, N, Xbar_1..Xbar_p
        areas: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Per-area confidence intervals for an area-level CSV.
    Intervals {
        input: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Monte Carlo coverage experiment on the balanced design.
    Coverage {
        /// number of areas
        #[arg(long, default_value_t = 30)]
        m: usize,
        /// shrinkage weights B to simulate, comma separated
        #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
        b: String,
        /// interval modes, comma separated subset of known-a,naive,calibrated,conditional
        #[arg(long, default_value = "known-a,naive,calibrated")]
        modes: String,
        /// replicates per B value
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute the bundled 15-state income example and report deviations
    /// from its published reference figures.
    Reproduce {
        /// relative quadrature tolerance
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// also emit the per-state deviations as CSV
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn open_input(path: &str) -> smallarea::Result<Box<dyn BufRead>> {
    if path == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        Ok(Box::new(std::io::Cursor::new(buf)))
    } else {
        Ok(Box::new(BufReader::new(File::open(path)?)))
    }
}

fn write_output(path: &Option<PathBuf>, content: &str) -> smallarea::Result<()> {
    match path {
        Some(p) => {
            let mut f = File::create(p)?;
            f.write_all(content.as_bytes())?;
        }
        None => {
            print!("{content}");
        }
    }
    Ok(())
}

fn parse_common(common: &CommonOpts, model: ModelKind) -> smallarea::Result<RunConfig> {
    let measures = common
        .measures
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Measure::parse(s.trim()))
        .collect::<smallarea::Result<Vec<_>>>()?;
    let interval_mode = common
        .interval_mode
        .as_deref()
        .map(IntervalMode::parse)
        .transpose()?;
    let format = match common.format.as_str() {
        "csv" => OutputFormat::Csv,
        "json" => OutputFormat::Json,
        other => {
            return Err(smallarea::Error::Validation(format!(
                "unknown output format '{other}'"
            )))
        }
    };
    let config = RunConfig {
        model,
        method: FhMethod::parse(&common.method)?,
        measures,
        alpha: common.alpha,
        interval_mode,
        quadrature_tol: common.tol,
        seed: common.seed,
        output_format: format,
    };
    config.validate()?;
    Ok(config)
}

fn run() -> smallarea::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit { input, common } => {
            let config = parse_common(&common, ModelKind::Area)?;
            let map = ColumnMap {
                intercept: !common.no_intercept,
                ..ColumnMap::default()
            };
            let data = ingest_area_csv(open_input(&input)?, &map)?;
            let report = run_fit(&config, &data)?;
            write_output(&common.output, &report.render(config.output_format))
        }
        Command::UnitFit {
            units,
            areas,
            common,
        } => {
            let config = parse_common(&common, ModelKind::Unit)?;
            let data = ingest_unit_csv(
                open_input(&units)?,
                open_input(&areas)?,
                !common.no_intercept,
            )?;
            let report = run_unit_fit(&config, &data, &HbPrior::default())?;
            write_output(&common.output, &report.render(config.output_format))
        }
        Command::Intervals { input, common } => {
            let mut common = common;
            if common.interval_mode.is_none() {
                common.interval_mode = Some("smith".to_string());
            }
            let config = parse_common(&common, ModelKind::Area)?;
            let map = ColumnMap {
                intercept: !common.no_intercept,
                ..ColumnMap::default()
            };
            let data = ingest_area_csv(open_input(&input)?, &map)?;
            let report = run_fit(&config, &data)?;
            write_output(&common.output, &report.render(config.output_format))
        }
        Command::Coverage {
            m,
            b,
            modes,
            reps,
            alpha,
            seed,
            output,
        } => {
            let b_values = b
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| smallarea::Error::Validation(format!("bad B value '{s}'")))
                })
                .collect::<smallarea::Result<Vec<f64>>>()?;
            let modes = modes
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| IntervalMode::parse(s.trim()))
                .collect::<smallarea::Result<Vec<_>>>()?;
            let mut out = String::from("mode,B,m,reps,coverage,se\n");
            for (k, &b) in b_values.iter().enumerate() {
                let config = CoverageConfig {
                    design: CoverageDesign::BalancedB { m, b },
                    alpha,
                    modes: modes.clone(),
                    reps,
                    seed: seed.wrapping_add(k as u64),
                    d: 3,
                    area: 0,
                };
                let table = coverage_simulator(&config)?;
                for line in table.to_csv().lines().skip(1) {
                    out.push_str(line);
                    out.push('\n');
                }
            }
            write_output(&output, &out)
        }
        Command::Reproduce { tol, csv, output } => {
            let report = smallarea::repro::run_reproduction(tol)?;
            let mut text = report.to_string();
            if csv {
                text.push('\n');
                text.push_str(&report.to_csv());
            }
            write_output(&output, &text)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
