use std::fs;

use qsv_core::simulator::{reproduce_fig3, reproduce_fig4, FigureProfile, CSV_HEADER};
use tempfile::TempDir;

fn small(mut p: FigureProfile) -> FigureProfile {
    p.trials = 6;
    p.measurements_per_trial = 80;
    p
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn fig3_files_and_columns() {
    let dir = TempDir::new().unwrap();
    let (summaries, paths) = reproduce_fig3(dir.path(), &small(FigureProfile::demo())).unwrap();
    assert_eq!(summaries.len(), 3);
    let names: Vec<_> = paths.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert_eq!(names, ["fig3a.csv", "fig3b.csv"]);

    let a = fs::read_to_string(dir.path().join("fig3a.csv")).unwrap();
    assert_eq!(a.lines().next().unwrap(), CSV_HEADER);
    let a_rows = rows(&a);
    assert_eq!(a_rows.len(), 3 * 80);
    let strategies: Vec<&str> = a_rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(strategies[0], "lo");
    assert_eq!(strategies[80], "uni");
    assert_eq!(strategies[160], "bi");

    let b = fs::read_to_string(dir.path().join("fig3b.csv")).unwrap();
    assert!(b.starts_with(&format!("{CSV_HEADER},all_accept_inv_eps\n")));
    assert_eq!(rows(&b).len(), 3 * 25);
}

#[test]
fn ideal_theory_columns_are_linear() {
    let dir = TempDir::new().unwrap();
    reproduce_fig3(dir.path(), &small(FigureProfile::ideal())).unwrap();
    let a = fs::read_to_string(dir.path().join("fig3a.csv")).unwrap();
    for (strategy, slope) in [("lo", 0.1371995306), ("uni", 0.1907475433), ("bi", 0.2225388005)] {
        for r in rows(&a).iter().filter(|r| r[0] == strategy) {
            let n: f64 = r[1].parse().unwrap();
            let theory: f64 = r[4].parse().unwrap();
            assert!((theory - slope * n).abs() <= 1e-8 * n.max(1.0), "{strategy} n={n}");
            // No noise: zero spread wherever a claim exists.
            if !r[3].is_empty() {
                assert!(r[3].parse::<f64>().unwrap().abs() < 1e-6);
            }
        }
    }
}

#[test]
fn fig4_bi_above_uni() {
    let dir = TempDir::new().unwrap();
    let (summaries, _) = reproduce_fig4(dir.path(), &small(FigureProfile::ideal())).unwrap();
    assert_eq!(summaries.len(), 4);
    for name in ["fig4a.csv", "fig4b.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let all = rows(&text);
        let (uni, bi): (Vec<_>, Vec<_>) = all.iter().partition(|r| r[0] == "uni");
        assert_eq!(uni.len(), bi.len());
        for (u, b) in uni.iter().zip(&bi) {
            assert_eq!(u[1], b[1]);
            assert!(b[4].parse::<f64>().unwrap() > u[4].parse::<f64>().unwrap());
        }
    }
    let slope = |i: usize| summaries[i].theory_slope;
    assert!(slope(2) < slope(0), "80° Uni slope below 70° Uni slope");
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let profile = small(FigureProfile::demo());
    reproduce_fig3(a.path(), &profile).unwrap();
    reproduce_fig3(b.path(), &profile).unwrap();
    for f in ["fig3a.csv", "fig3b.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("does/not/exist");
    let err = reproduce_fig3(&missing, &small(FigureProfile::ideal())).unwrap_err();
    assert!(matches!(err, qsv_core::QsvError::Io(_)));
}
