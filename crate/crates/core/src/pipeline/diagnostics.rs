use std::ops::RangeInclusive;

use serde::Serialize;

use crate::datamodel::{PopulationPanel, QuarterIndex, MAX_AGE_GROUP};
use crate::error::{Error, Result};

/// Linear trend of a group's total population fitted over whole quarters,
/// with the observed-minus-projected gap for later quarters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSummary {
    pub group: String,
    pub slope_per_quarter: f64,
    pub fitted_mean: f64,
    pub gaps: Vec<QuarterGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarterGap {
    pub group: String,
    pub quarter: String,
    pub observed: f64,
    pub projected: f64,
    pub gap: f64,
    pub relative_gap: f64,
}

fn quarters_of(years: &RangeInclusive<i32>) -> Vec<QuarterIndex> {
    years
        .clone()
        .flat_map(|y| (1..=4).map(move |q| QuarterIndex::new(y, q).expect("valid quarter")))
        .collect()
}

fn group_trend(
    pop: &PopulationPanel,
    label: &str,
    ages: RangeInclusive<u32>,
    fit: &[QuarterIndex],
    projection: &[QuarterIndex],
) -> Result<TrendSummary> {
    let total = |q: QuarterIndex| {
        pop.quarter_total(q, |s| ages.contains(&s.age_group()))
            .ok_or_else(|| Error::Coverage(format!("population does not cover {q}")))
    };
    let points: Vec<(f64, f64)> = fit
        .iter()
        .map(|&q| Ok((q.ordinal() as f64, total(q)?)))
        .collect::<Result<_>>()?;
    if points.len() < 2 {
        return Err(Error::Domain("population trend needs at least two quarters".into()));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - cx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - cx) * (p.1 - cy)).sum();
    let slope = sxy / sxx;
    let gaps = projection
        .iter()
        .map(|&q| {
            let observed = total(q)?;
            let projected = cy + slope * (q.ordinal() as f64 - cx);
            Ok(QuarterGap {
                group: label.to_string(),
                quarter: q.to_string(),
                observed,
                projected,
                gap: observed - projected,
                relative_gap: (observed - projected) / projected,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrendSummary {
        group: label.to_string(),
        slope_per_quarter: slope,
        fitted_mean: cy,
        gaps,
    })
}

/// Trends of the population under and at-or-over `age_threshold`.
pub fn population_trend_diagnostic(
    pop: &PopulationPanel,
    age_threshold: u32,
    fit_years: RangeInclusive<i32>,
    projection_years: RangeInclusive<i32>,
) -> Result<(TrendSummary, TrendSummary)> {
    if age_threshold == 0 || age_threshold > MAX_AGE_GROUP as u32 {
        return Err(Error::Domain(format!(
            "age threshold {age_threshold} leaves one group empty"
        )));
    }
    let fit = quarters_of(&fit_years);
    let projection = quarters_of(&projection_years);
    let under = group_trend(pop, &format!("under {age_threshold}"), 0..=age_threshold - 1, &fit, &projection)?;
    let over = group_trend(pop, &format!("{age_threshold}+"), age_threshold..=MAX_AGE_GROUP as u32, &fit, &projection)?;
    Ok((under, over))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::QuarterRange;
    use crate::synth::{GeneratorTruth, PopulationBreak};

    fn quarters(a: &str, b: &str) -> QuarterRange {
        QuarterRange::new(a.parse().unwrap(), b.parse().unwrap()).unwrap()
    }

    #[test]
    fn constant_population_has_no_trend_or_gap() {
        let pop = PopulationPanel::from_fn(quarters("2014-Q1", "2023-Q4"), |_, _| 100.0).unwrap();
        let (under, over) = population_trend_diagnostic(&pop, 65, 2014..=2019, 2020..=2023).unwrap();
        for t in [&under, &over] {
            assert!(t.slope_per_quarter.abs() < 1e-9);
            assert!(t.gaps.iter().all(|g| g.gap.abs() < 1e-6));
            assert_eq!(t.gaps.len(), 16);
        }
    }

    #[test]
    fn empty_groups_are_domain_errors() {
        let pop = PopulationPanel::from_fn(quarters("2014-Q1", "2023-Q4"), |_, _| 100.0).unwrap();
        assert!(matches!(population_trend_diagnostic(&pop, 0, 2014..=2019, 2020..=2023), Err(Error::Domain(_))));
        assert!(matches!(population_trend_diagnostic(&pop, 96, 2014..=2019, 2020..=2023), Err(Error::Domain(_))));
        assert!(matches!(population_trend_diagnostic(&pop, 65, 2010..=2019, 2020..=2023), Err(Error::Coverage(_))));
    }

    #[test]
    fn slowdown_shows_as_negative_gap_for_young_only() {
        let mut truth = GeneratorTruth::reference(0);
        truth.population.slowdown = Some(PopulationBreak {
            from: "2020-Q1".parse().unwrap(),
            under_age: 65,
            growth_per_quarter: 0.0005,
        });
        let pop = truth.population.panel(quarters("2014-Q1", "2023-Q4")).unwrap();
        let (under, over) = population_trend_diagnostic(&pop, 65, 2014..=2019, 2020..=2023).unwrap();
        let last_under = under.gaps.last().unwrap();
        let last_over = over.gaps.last().unwrap();
        assert!(last_under.relative_gap < -0.03, "{}", last_under.relative_gap);
        assert!(last_over.relative_gap.abs() < last_under.relative_gap.abs() / 3.0);
    }
}
