#![allow(dead_code)]

use std::path::Path;

use excess_mortality::datamodel::{write_covid, write_deaths, write_population, MonthIndex, MonthRange};
use excess_mortality::pipeline::Inputs;
use excess_mortality::synth::{generate_covid, generate_panel, GeneratorTruth};

pub fn months(a: &str, b: &str) -> MonthRange {
    MonthRange::new(a.parse().unwrap(), b.parse().unwrap()).unwrap()
}

pub fn month(s: &str) -> MonthIndex {
    s.parse().unwrap()
}

/// Reference truth over 2010-2023 with a 10% rise in deaths from April 2020.
pub fn shocked_truth(seed: u64) -> GeneratorTruth {
    let mut truth = GeneratorTruth::reference(seed);
    truth.shock = Some((months("2020-04", "2023-12"), 1.1));
    truth
}

pub fn synthetic_inputs(truth: &GeneratorTruth, range: MonthRange, covid_mean: Option<f64>) -> Inputs {
    let (deaths, population) = generate_panel(truth, range).unwrap();
    let covid = covid_mean.map(|mean| {
        let window = months("2020-01", "2023-12");
        let records = generate_covid(window, mean, truth.seed + 1).unwrap();
        let (first, last) = excess_mortality::datamodel::date_bounds(&window);
        excess_mortality::datamodel::aggregate_covid_daily(&records, first, last).unwrap()
    });
    Inputs { deaths, population, covid }
}

/// Writes deaths.csv, population.csv and covid.csv for `truth` into `dir`.
pub fn write_dataset(dir: &Path, truth: &GeneratorTruth, range: MonthRange, covid_mean: f64) {
    let (deaths, population) = generate_panel(truth, range).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    write_deaths(&deaths, std::fs::File::create(dir.join("deaths.csv")).unwrap()).unwrap();
    write_population(&population, std::fs::File::create(dir.join("population.csv")).unwrap()).unwrap();
    let records = generate_covid(months("2020-01", "2023-12"), covid_mean, truth.seed + 1).unwrap();
    write_covid(&records, std::fs::File::create(dir.join("covid.csv")).unwrap()).unwrap();
}
