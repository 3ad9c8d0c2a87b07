use std::path::Path;
use std::process::{Command, Output};

fn excess(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_excess")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = excess(&["synth", "--out", path(dir), "--shock", "1.08", "--covid-mean", "250", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_analyse_and_sensitivity() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    for f in ["deaths.csv", "population.csv", "covid.csv"] {
        assert!(data.join(f).exists());
    }
    let out = tmp.path().join("out");
    let (deaths, population, covid) = (data.join("deaths.csv"), data.join("population.csv"), data.join("covid.csv"));
    let common = [
        "--deaths",
        path(&deaths),
        "--population",
        path(&population),
        "--covid",
        path(&covid),
        "--samples",
        "200",
        "--out",
        path(&out),
    ];
    let mut args = vec!["analyse", "--format", "json", "--dump-design"];
    args.extend(common);
    let run = excess(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in [
        "fig1_monthly_fit.json",
        "fig2_standardised_rates.json",
        "fig3_yearly_excess.json",
        "fig3_monthly_excess.json",
        "fig4_group_excess.json",
        "figS1_ten_year_bands.json",
        "summary.json",
        "model.json",
        "design_matrix.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["excess_mean"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["samples"], 200);

    let mut args = vec!["sensitivity", "--baselines", "4,6"];
    args.extend(common);
    let run = excess(&args);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = std::fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let mut args = vec!["sensitivity", "--baselines", "5..7"];
    args.extend(common);
    assert!(excess(&args).status.success());
    let table = std::fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn diagnostics_and_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out = tmp.path().join("diag");
    let run = excess(&["diagnostics", "--population", path(&data.join("population.csv")), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("figS2_population_trend.csv").exists());

    let rounded = tmp.path().join("rounded.csv");
    let run = excess(&["round", "--deaths", path(&data.join("deaths.csv")), "--out", path(&rounded)]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(&rounded).unwrap();
    for line in text.lines().skip(1) {
        let c: u64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(c == 0 || c % 3 == 0, "{c}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let run = excess(&["analyse", "--deaths", path(&missing), "--population", path(&missing)]);
    assert_eq!(run.status.code(), Some(2));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "year,month,sex,age_group,count\n2020,13,male,5,1\n").unwrap();
    let run = excess(&["analyse", "--deaths", path(&bad), "--population", path(&bad)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 2"));

    let data = tmp.path().join("data");
    synth(&data);
    let run = excess(&[
        "analyse",
        "--deaths",
        path(&data.join("deaths.csv")),
        "--population",
        path(&data.join("population.csv")),
        "--fit-start",
        "2019-01",
        "--fit-end",
        "2019-01",
        "--samples",
        "10",
        "--out",
        path(&tmp.path().join("o")),
    ]);
    assert_eq!(run.status.code(), Some(3), "{}", String::from_utf8_lossy(&run.stderr));

    for bad in ["3", "9..5", "four"] {
        let run = excess(&["sensitivity", "--deaths", "x", "--population", "y", "--baselines", bad]);
        assert_eq!(run.status.code(), Some(2), "{bad}");
    }
}
