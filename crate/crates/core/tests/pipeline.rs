mod common;

use common::{month, months, shocked_truth, synthetic_inputs};
use excess_mortality::datamodel::{CovidBand, Sex};
use excess_mortality::design::DesignSpec;
use excess_mortality::glm::predict_mu;
use excess_mortality::pipeline::{analyse, baseline_window, run_sensitivity, AnalysisSettings, Baseline};
use excess_mortality::synth::{brute_force_expected, GeneratorTruth};
use excess_mortality::uncertainty::{aggregate_expected, CoefficientSamples, Selection};
use excess_mortality::Error;

fn settings(samples: usize) -> AnalysisSettings {
    AnalysisSettings {
        samples,
        ..AnalysisSettings::default()
    }
}

#[test]
fn sampled_aggregation_matches_brute_force_sum() {
    let truth = GeneratorTruth::reference(3);
    let inputs = synthetic_inputs(&truth, months("2014-01", "2023-12"), None);
    let baseline = Baseline::fit(&inputs, months("2014-01", "2019-12"), 10, 1).unwrap();
    let window = months("2020-01", "2021-06");
    let design = baseline.design(&inputs, window).unwrap();
    let beta = baseline.model.beta();
    let at_estimate = CoefficientSamples::repeated(beta, 1);
    for selection in [
        Selection::all("all"),
        Selection::year(2021).with_ages(80..=95),
        Selection::months("winter", months("2020-06", "2020-08")).with_sex(Sex::Female),
        Selection::month(month("2021-02")).with_ages(CovidBand::Sixties.ages()).with_sex(Sex::Male),
    ] {
        let fast = aggregate_expected(&at_estimate, &design, &selection.rows(&design)).unwrap()[0];
        let slow = brute_force_expected(beta, &DesignSpec::new(months("2014-01", "2019-12")), &inputs.population, window, &selection)
            .unwrap();
        assert!((fast - slow).abs() <= 1e-10 * slow, "{}: {fast} vs {slow}", selection.label);
    }
}

#[test]
fn singleton_and_empty_selections() {
    let truth = GeneratorTruth::reference(4);
    let inputs = synthetic_inputs(&truth, months("2014-01", "2020-12"), None);
    let baseline = Baseline::fit(&inputs, months("2014-01", "2019-12"), 5, 1).unwrap();
    let design = baseline.design(&inputs, months("2020-01", "2020-12")).unwrap();
    let mu = predict_mu(&baseline.model, &design).unwrap();
    let at_estimate = CoefficientSamples::repeated(baseline.model.beta(), 1);
    let one = aggregate_expected(&at_estimate, &design, &[17]).unwrap()[0];
    assert!((one - mu[17]).abs() <= 1e-12 * mu[17]);
    let none = brute_force_expected(
        baseline.model.beta(),
        &baseline.spec,
        &inputs.population,
        months("2020-01", "2020-12"),
        &Selection::all("none").with_ages(200..=201),
    )
    .unwrap();
    assert_eq!(none, 0.0);
}

#[test]
fn shock_is_detected_and_null_continuation_is_not() {
    let shocked = synthetic_inputs(&shocked_truth(8), months("2010-01", "2023-12"), Some(300.0));
    let res = analyse(&shocked, &settings(1000)).unwrap();
    assert!(res.cumulative.excess_lo > 0.0);
    let y2021 = res.yearly_excess.iter().find(|r| r.period == "2021").unwrap();
    assert!((y2021.percent_mean - 10.0).abs() < 2.5, "{}", y2021.percent_mean);
    assert!(y2021.covid_deaths.is_some());
    assert!(res.cumulative.smr_lr_excess.unwrap() > 0.0);

    let null = synthetic_inputs(&GeneratorTruth::reference(8), months("2010-01", "2023-12"), None);
    let res = analyse(&null, &settings(1000)).unwrap();
    assert!(res.cumulative.excess_lo < 0.0 && res.cumulative.excess_hi > 0.0);
    assert!(res.yearly_excess.iter().all(|r| r.covid_deaths.is_none()));
}

#[test]
fn output_shapes() {
    let inputs = synthetic_inputs(&shocked_truth(9), months("2010-01", "2023-12"), Some(200.0));
    let res = analyse(&inputs, &settings(200)).unwrap();
    assert_eq!(res.monthly_fit.len(), 168);
    assert_eq!(res.rates.len(), 14);
    assert_eq!(res.monthly_excess.len(), 48);
    assert_eq!(res.yearly_excess.len(), 4);
    assert_eq!(res.groups.len(), 4 * 6);
    assert_eq!(res.ten_year_bands.len(), 4 * 10);
    assert!(res.monthly_fit.iter().filter(|r| r.in_fit_window).count() == 72);
    for r in &res.rates {
        assert!(r.qpr_lo_per_1000 <= r.qpr_mean_per_1000 && r.qpr_mean_per_1000 <= r.qpr_hi_per_1000);
        assert!(r.observed_per_1000 > 3.0 && r.observed_per_1000 < 12.0);
    }
    let s = &res.summary;
    assert!((s.per_million_mean - 1e6 * s.excess_mean / s.standard_population_total).abs() < 1e-6);
}

#[test]
fn sensitivity_row_reproduces_analysis() {
    let inputs = synthetic_inputs(&shocked_truth(10), months("2010-01", "2023-12"), None);
    let s = settings(300);
    let main = analyse(&inputs, &s).unwrap();
    let report = run_sensitivity(&inputs, &s, &[10, 6, 4]).unwrap();
    let years: Vec<u32> = report.rows.iter().map(|r| r.baseline_years).collect();
    assert_eq!(years, [4, 6, 10]);
    let six = &report.rows[1];
    assert_eq!(six.fit_window, "2014-01..2019-12");
    assert_eq!(six.excess_mean, Some(main.cumulative.excess_mean));
    assert_eq!(six.excess_lo, Some(main.cumulative.excess_lo));
    assert_eq!(six.smr_lr_excess, main.cumulative.smr_lr_excess);
}

#[test]
fn sensitivity_rejects_bad_lengths_and_keeps_failed_rows() {
    let inputs = synthetic_inputs(&shocked_truth(12), months("2013-01", "2023-12"), None);
    let s = settings(100);
    assert!(matches!(run_sensitivity(&inputs, &s, &[]), Err(Error::Usage(_))));
    assert!(matches!(run_sensitivity(&inputs, &s, &[3]), Err(Error::Usage(_))));
    assert!(matches!(run_sensitivity(&inputs, &s, &[11]), Err(Error::Usage(_))));
    let report = run_sensitivity(&inputs, &s, &[7, 8]).unwrap();
    assert!(report.rows[0].excess_mean.is_some());
    assert!(report.rows[1].excess_mean.is_none());
    assert!(report.rows[1].error.as_deref().unwrap().contains("cover"));
}

#[test]
fn baseline_windows_end_before_projection() {
    let w = baseline_window(&months("2020-01", "2023-12"), 4).unwrap();
    assert_eq!(w, months("2016-01", "2019-12"));
    let w = baseline_window(&months("2020-01", "2023-12"), 10).unwrap();
    assert_eq!(w, months("2010-01", "2019-12"));
}

#[test]
fn overlapping_windows_and_missing_data_are_rejected() {
    let inputs = synthetic_inputs(&GeneratorTruth::reference(13), months("2014-01", "2021-12"), None);
    let overlap = AnalysisSettings {
        projection_window: months("2019-06", "2021-12"),
        ..settings(50)
    };
    assert!(matches!(analyse(&inputs, &overlap), Err(Error::Usage(_))));
    assert!(matches!(analyse(&inputs, &settings(50)), Err(Error::Coverage(_))));
}
