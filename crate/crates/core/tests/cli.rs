use std::fs;
use std::path::Path;

use serde_json::Value;

use sparsepois::cli::{bench_sweep, mean_sd, run_command, write_bench_outputs, BenchConfig, Regime, CSV_HEADER};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["sparsepois"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_screen_solve_export() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let data = p("d.csv");
    assert_eq!(
        run(&[
            "generate", "--m", "100", "--n", "50", "--k-true", "5", "--rho", "0.35", "--sigma2",
            "0.01", "--y-max", "10", "--seed", "1", "-o", &data,
        ]),
        0
    );
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(text.lines().all(|l| l.split(',').count() == 101));
    assert!(dir.path().join("d.meta.json").exists());

    let screen = p("s.json");
    assert_eq!(run(&["screen", &data, "--k", "5", "--gamma", "auto", "-o", &screen]), 0);
    let s = read_json(Path::new(&screen));
    assert!(s["ub"].as_f64().unwrap() >= s["v_lower"].as_f64().unwrap());
    assert_eq!(s["gamma"].as_f64().unwrap(), 1.0 / 50f64.sqrt());
    let f0: Vec<u64> = s["fixed0"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let f1: Vec<u64> = s["fixed1"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(f0.iter().all(|j| !f1.contains(j)));
    assert_eq!(s["fixed0_count"].as_u64().unwrap() as usize, f0.len());

    let solve = p("r.json");
    assert_eq!(
        run(&["solve", &data, "--k", "5", "--gamma", "auto", "--time-limit", "60", "-o", &solve]),
        0
    );
    let r = read_json(Path::new(&solve));
    let gap = r["gap_percent"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&gap));
    assert!(["optimal", "time_limit", "node_limit"].contains(&r["status"].as_str().unwrap()));
    assert!(r["support"].as_array().unwrap().len() <= 5);

    let model = p("m.txt");
    assert_eq!(run(&["export", &data, "--k", "5", "--gamma", "0.5", "--screen", "-o", &model]), 0);
    let parsed = sparsepois::conic::import_model(Path::new(&model)).unwrap();
    assert_eq!(parsed.exp_cones.len(), 50);
    assert_eq!(parsed.rq_cones.len(), 100);
}

#[test]
fn bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,x1\n1,0.5\n-2,0.1\n").unwrap();
    assert_eq!(run(&["screen", data.to_str().unwrap(), "--k", "1"]), 1);
    assert_eq!(run(&["solve", "--k", "1"]), 2);
    assert_eq!(run(&["generate", "--m", "0", "--n", "5", "--k-true", "1", "-o", "x.csv"]), 1);
}

fn tiny_bench(seed_base: u64) -> BenchConfig {
    BenchConfig {
        m: 30,
        n: 20,
        k: 3,
        k_true: 3,
        y_max: 10,
        gamma_multipliers: vec![1.0, 4.0],
        regimes: vec![Regime { rho: 0.35, sigma2: 0.01 }, Regime { rho: 0.7, sigma2: 1.0 }],
        trials: 3,
        time_limit_s: 30.0,
        seed_base,
        solve: true,
        record_times: false,
    }
}

#[test]
fn bench_rows_and_recomputable_statistics() {
    let out = bench_sweep(&tiny_bench(7)).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.trials.len(), 12);
    for (row, cell) in out.rows.iter().zip(out.trials.chunks(3)) {
        let f1: Vec<f64> = cell.iter().map(|t| t.fixed1 as f64).collect();
        let (mean, sd) = mean_sd(&f1);
        assert_eq!((row.fixed1_mean, row.fixed1_sd), (mean, sd));
        assert!(cell.iter().all(|t| t.rho == row.rho && t.gamma_mult == row.gamma_mult));
        assert_eq!(cell.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![7, 8, 9]);
    }
    let total: usize = out.histogram.iter().map(|b| b.count).sum();
    assert_eq!(total, 12);
}

#[test]
fn bench_is_reproducible_and_writes_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = bench_sweep(&tiny_bench(3)).unwrap();
        write_bench_outputs(&[out], dir.path()).unwrap();
    }
    let csv_a = fs::read_to_string(a.path().join("bench.csv")).unwrap();
    let csv_b = fs::read_to_string(b.path().join("bench.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(csv_a.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv_a.lines().count(), 5);
    assert_eq!(fs::read_dir(a.path().join("trials")).unwrap().count(), 12);
    assert!(a.path().join("summary.json").exists());
    let hist = fs::read_to_string(a.path().join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 13);
}

#[test]
fn bench_subcommand_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let code = run(&[
        "bench", "--m", "20", "--n", "15", "--k", "2", "--k-true", "2", "--gamma-mults", "1",
        "--regimes", "0.35:0.01", "--trials", "2", "--no-times", "-o", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
