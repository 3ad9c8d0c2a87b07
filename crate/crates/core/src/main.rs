use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use excess_mortality::datamodel::{
    parse_deaths, parse_population, random_round, write_covid, write_deaths, write_population, MonthIndex,
    MonthRange, PopulationMapping, QuarterIndex,
};
use excess_mortality::pipeline::{
    population_trend_diagnostic, run_analysis, run_sensitivity, write_json, write_records, AnalysisConfig,
    AnalysisSettings, Inputs, OutputFormat,
};
use excess_mortality::synth::{generate_covid, generate_panel, DispersionMode, GeneratorTruth};
use excess_mortality::{Error, Result};

#[derive(Parser)]
#[command(name = "excess", version, about = "Excess mortality from a quasi-Poisson baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the baseline and write every figure table.
    Analyse(AnalyseArgs),
    /// Cumulative excess for several baseline lengths.
    Sensitivity(SensitivityArgs),
    /// Population trend under and over an age threshold.
    Diagnostics(DiagnosticsArgs),
    /// Randomly round a deaths file to multiples of 3.
    Round(RoundArgs),
    /// Write a synthetic deaths, population and covid dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    deaths: PathBuf,
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    covid: Option<PathBuf>,
    /// piecewise-constant or linear
    #[arg(long, default_value = "piecewise-constant")]
    population_mapping: PopulationMapping,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "2014-01")]
    fit_start: MonthIndex,
    #[arg(long, default_value = "2019-12")]
    fit_end: MonthIndex,
    #[arg(long, default_value = "2020-01")]
    project_start: MonthIndex,
    #[arg(long, default_value = "2023-12")]
    project_end: MonthIndex,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "2021-Q1")]
    std_quarter: QuarterIndex,
}

impl ModelArgs {
    fn settings(&self) -> Result<AnalysisSettings> {
        Ok(AnalysisSettings {
            fit_window: MonthRange::new(self.fit_start, self.fit_end)?,
            projection_window: MonthRange::new(self.project_start, self.project_end)?,
            samples: self.samples,
            seed: self.seed,
            std_quarter: self.std_quarter,
        })
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// csv or json
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Args)]
struct AnalyseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Also write the fit-window design matrix.
    #[arg(long)]
    dump_design: bool,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Baseline lengths in years, each between 4 and 10: a range such as
    /// `4..10` or a list such as `4,6,8`.
    #[arg(long, default_value = "4..10")]
    baselines: String,
}

#[derive(Args)]
struct DiagnosticsArgs {
    #[arg(long)]
    population: PathBuf,
    #[arg(long, default_value_t = 65)]
    age_threshold: u32,
    #[arg(long, default_value_t = 2014)]
    fit_first_year: i32,
    #[arg(long, default_value_t = 2019)]
    fit_last_year: i32,
    #[arg(long, default_value_t = 2020)]
    project_first_year: i32,
    #[arg(long, default_value_t = 2023)]
    project_last_year: i32,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RoundArgs {
    #[arg(long)]
    deaths: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "2010-01")]
    start: MonthIndex,
    #[arg(long, default_value = "2023-12")]
    end: MonthIndex,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Variance-to-mean ratio; 1 draws plain Poisson counts.
    #[arg(long, default_value_t = 1.0)]
    dispersion: f64,
    /// Multiplier on expected deaths from --shock-start onwards.
    #[arg(long)]
    shock: Option<f64>,
    #[arg(long, default_value = "2020-04")]
    shock_start: MonthIndex,
    /// Mean attributed covid deaths per month; no covid file when absent.
    #[arg(long)]
    covid_mean: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_lengths(spec: &str) -> Result<Vec<u32>> {
    let number = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Error::Usage(format!("invalid baseline length '{s}'")))
    };
    match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (number(a)?, number(b.trim_start_matches('='))?);
            if a > b {
                return Err(Error::Usage(format!("empty baseline range {spec}")));
            }
            Ok((a..=b).collect())
        }
        None => spec.split(',').map(number).collect(),
    }
}

fn config(input: &InputArgs, model: &ModelArgs, output: &OutputArgs) -> Result<AnalysisConfig> {
    Ok(AnalysisConfig {
        deaths: input.deaths.clone(),
        population: input.population.clone(),
        covid: input.covid.clone(),
        settings: model.settings()?,
        population_mapping: input.population_mapping,
        out_dir: output.out.clone(),
        format: output.format,
        dump_design: false,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyse(a) => {
            let mut cfg = config(&a.input, &a.model, &a.output)?;
            cfg.dump_design = a.dump_design;
            let results = run_analysis(&cfg)?;
            let s = &results.summary;
            println!(
                "excess {:.0} [{:.0}, {:.0}] over {}; outputs in {}",
                s.excess_mean,
                s.excess_lo,
                s.excess_hi,
                s.projection_window,
                cfg.out_dir.display()
            );
        }
        Command::Sensitivity(a) => {
            let cfg = config(&a.input, &a.model, &a.output)?;
            let lengths = parse_lengths(&a.baselines)?;
            let inputs = Inputs::load(&cfg)?;
            let report = run_sensitivity(&inputs, &cfg.settings, &lengths)?;
            write_records(&cfg.out_dir, "sensitivity", cfg.format, &report.rows)?;
            for row in &report.rows {
                match (row.excess_mean, &row.error) {
                    (Some(m), _) => println!(
                        "{:>2} years ({}): {:.0} [{:.0}, {:.0}]",
                        row.baseline_years,
                        row.fit_window,
                        m,
                        row.excess_lo.unwrap_or(f64::NAN),
                        row.excess_hi.unwrap_or(f64::NAN)
                    ),
                    (None, e) => println!("{:>2} years ({}): failed: {}", row.baseline_years, row.fit_window, e.as_deref().unwrap_or("")),
                }
            }
        }
        Command::Diagnostics(a) => {
            let pop = parse_population(open(&a.population)?)?;
            let (under, over) = population_trend_diagnostic(
                &pop,
                a.age_threshold,
                a.fit_first_year..=a.fit_last_year,
                a.project_first_year..=a.project_last_year,
            )?;
            let gaps: Vec<_> = under.gaps.iter().chain(&over.gaps).cloned().collect();
            write_records(&a.output.out, "figS2_population_trend", a.output.format, &gaps)?;
            write_json(&a.output.out, "population_trend", &[&under, &over])?;
            for t in [&under, &over] {
                let last = t.gaps.last();
                println!(
                    "{}: slope {:.1} per quarter, last gap {:.2}%",
                    t.group,
                    t.slope_per_quarter,
                    last.map_or(f64::NAN, |g| 100.0 * g.relative_gap)
                );
            }
        }
        Command::Round(a) => {
            let panel = parse_deaths(open(&a.deaths)?)?;
            write_deaths(&random_round(&panel, a.seed), create(&a.out)?)?;
        }
        Command::Synth(a) => {
            let months = MonthRange::new(a.start, a.end)?;
            let mut truth = GeneratorTruth::reference(a.seed);
            if a.dispersion < 1.0 {
                return Err(Error::Usage("dispersion must be at least 1".into()));
            }
            if a.dispersion > 1.0 {
                truth = truth.with_dispersion(DispersionMode::Inflated(a.dispersion));
            }
            if let Some(factor) = a.shock {
                if a.shock_start > a.end {
                    return Err(Error::Usage("shock starts after the last month".into()));
                }
                truth.shock = Some((MonthRange::new(a.shock_start.max(a.start), a.end)?, factor));
            }
            let (deaths, pop) = generate_panel(&truth, months)?;
            write_deaths(&deaths, create(&a.out.join("deaths.csv"))?)?;
            write_population(&pop, create(&a.out.join("population.csv"))?)?;
            if let Some(mean) = a.covid_mean {
                let covid_months = MonthRange::new(a.shock_start.max(a.start), a.end)?;
                let records = generate_covid(covid_months, mean, a.seed.wrapping_add(1))?;
                write_covid(&records, create(&a.out.join("covid.csv"))?)?;
            }
            info!("wrote synthetic data for {months} to {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
