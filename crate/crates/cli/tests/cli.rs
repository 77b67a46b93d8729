use std::path::Path;
use std::process::{Command, Output};

fn cavqfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavqfi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("sweep.json");
    let text = format!(
        r#"{{
  "probes": ["x", "ghz"],
  "n_range": {{"min": 2, "max": 5}},
  "regimes": [{{"kappa": 0.8, "gamma": 0.8}}],
  "time_grid": {{"t_end": 5.0, "n_samples": 51}},
  "out_dir": "{}"
}}"#,
        out.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn fit_reports_the_exponent_of_a_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quad.csv");
    let mut text = String::from("N,F\n");
    for n in 2..=12 {
        text.push_str(&format!("{n},{}\n", 2 * n * n + 1));
    }
    std::fs::write(&path, text).unwrap();
    let o = cavqfi(&["fit", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("b = 2.000"), "{}", stdout(&o));
}

#[test]
fn unknown_flags_exit_with_usage() {
    let o = cavqfi(&["sweep", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_exits_cleanly() {
    let o = cavqfi(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "sweep", "map", "fit", "oracle-check"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn sweep_without_config_is_a_usage_error() {
    let o = cavqfi(&["sweep"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"probes": []}"#).unwrap();
    let o = cavqfi(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("probe list is empty"), "{}", stderr(&o));
}

#[test]
fn small_oracle_check_passes() {
    let o = cavqfi(&["oracle-check", "--n-max", "2", "--t-end", "5", "--samples", "51"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn simulate_shows_rise_peak_and_decay() {
    let dir = tempfile::tempdir().unwrap();
    let o = cavqfi(&[
        "simulate", "-n", "4", "--probe", "x", "--kappa", "0.8", "--gamma", "0.8", "--t-end", "15",
        "--samples", "151", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("max_F="));
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let f: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let (peak, &max) = f
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert_eq!(f[0], 0.0);
    assert!(peak > 0 && peak < f.len() - 1, "peak at index {peak}");
    assert!(*f.last().unwrap() < 0.5 * max);
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let cfg = write_config(dir.path(), &out);
        let o = cavqfi(&["sweep", "--config", cfg.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(out);
    }
    for file in ["results.csv", "fits.csv", "errors.csv", "metadata.json"] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let results = std::fs::read_to_string(outputs[0].join("results.csv")).unwrap();
    assert_eq!(
        results.lines().next().unwrap(),
        "probe,N,kappa_over_g,gamma_over_g,target,max_F,t_at_max,fit_id,steps,rejected_steps,version,config_hash"
    );
    assert_eq!(results.lines().count(), 9);
}
