//! Command-line front end and the benchmark sweep.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bnb::{branch_and_bound, gap_percent, BnbOptions, SolveStatus};
use crate::conic::{build_conic_model, export_model};
use crate::dataset::{generate_synthetic, load_csv, save_csv, Dataset, GenerationConfig};
use crate::error::{Error, Result};
use crate::screen::safe_screen_with;
use crate::screen::ScreenOptions;

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_ENV: &str = "SPARSEPOIS_THREADS";

/// `γ = multiplier / √n`.
pub fn auto_gamma(multiplier: f64, n: usize) -> f64 {
    multiplier / (n as f64).sqrt()
}

/// A `--gamma` value: a positive number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaArg {
    Auto,
    Value(f64),
}

impl GammaArg {
    pub fn resolve(self, multiplier: f64, n: usize) -> f64 {
        match self {
            GammaArg::Auto => auto_gamma(multiplier, n),
            GammaArg::Value(g) => g,
        }
    }
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GammaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaArg::Value(g)),
            _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
        }
    }
}

/// Correlation and noise level of one synthetic regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub rho: f64,
    pub sigma2: f64,
}

impl FromStr for Regime {
    type Err = String;

    /// `rho:sigma2`, e.g. `0.35:0.01`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `rho:sigma2`, got `{s}`"))?;
        let rho = a.trim().parse().map_err(|_| format!("bad rho in `{s}`"))?;
        let sigma2 = b.trim().parse().map_err(|_| format!("bad sigma2 in `{s}`"))?;
        Ok(Regime { rho, sigma2 })
    }
}

/// The six (ρ, σ²) combinations: low/high correlation × three noise levels.
pub fn default_regimes() -> Vec<Regime> {
    let mut out = Vec::new();
    for sigma2 in [0.01, 0.1, 1.0] {
        for rho in [0.35, 0.7] {
            out.push(Regime { rho, sigma2 });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub k_true: usize,
    pub y_max: u64,
    pub gamma_multipliers: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub trials: usize,
    pub time_limit_s: f64,
    pub seed_base: u64,
    /// Run branch-and-bound after screening.
    pub solve: bool,
    /// Record wall-clock times. With `false` every time is reported as 0 so
    /// that repeated sweeps are byte-identical.
    pub record_times: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            m: 10_000,
            n: 1000,
            k: 30,
            k_true: 30,
            y_max: 10,
            gamma_multipliers: vec![1.0, 4.0, 16.0],
            regimes: default_regimes(),
            trials: 5,
            time_limit_s: 600.0,
            seed_base: 0,
            solve: false,
            record_times: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.m == 0 || self.n == 0 || self.k == 0 || self.k_true == 0 || self.y_max == 0 {
            return bad("m, n, k, k_true and y_max must be positive");
        }
        if self.k > self.m || self.k_true > self.m {
            return bad("k and k_true must not exceed m");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if self.regimes.is_empty() || self.gamma_multipliers.is_empty() {
            return bad("at least one regime and one gamma multiplier are required");
        }
        if self.gamma_multipliers.iter().any(|g| !(*g > 0.0)) {
            return bad("gamma multipliers must be positive");
        }
        if !(self.time_limit_s > 0.0) {
            return bad("time limit must be positive");
        }
        Ok(())
    }
}

/// Outcome of one (regime, γ multiplier, trial) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub gamma_mult: f64,
    pub gamma: f64,
    pub trial: usize,
    pub seed: u64,
    pub fixed0: usize,
    pub fixed1: usize,
    /// Screening time, or branch-and-bound wall time when solving.
    pub time_s: f64,
    pub gap_percent: f64,
    pub nodes: usize,
    /// Did not finish within the time limit.
    pub over_time: bool,
    pub ub: f64,
    pub v_lower: f64,
    pub obj: Option<f64>,
    pub lb: Option<f64>,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
}

/// One aggregated cell, i.e. one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub gamma_mult: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub fixed1_mean: f64,
    pub fixed1_sd: f64,
    pub fixed0_mean: f64,
    pub fixed0_sd: f64,
    pub time_mean: f64,
    pub time_sd: f64,
    pub gap_mean: f64,
    pub gap_sd: f64,
    pub nodes_mean: f64,
    pub nodes_sd: f64,
    pub ot_count: usize,
    /// Trials that ended in an error; excluded from the statistics.
    pub failures: usize,
}

pub const CSV_HEADER: &str = "n,gamma_mult,rho,sigma2,fixed1_mean,fixed1_sd,fixed0_mean,fixed0_sd,\
time_mean,time_sd,gap_mean,gap_sd,nodes_mean,nodes_sd,ot_count";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.gamma_mult,
            self.rho,
            self.sigma2,
            self.fixed1_mean,
            self.fixed1_sd,
            self.fixed0_mean,
            self.fixed0_sd,
            self.time_mean,
            self.time_sd,
            self.gap_mean,
            self.gap_sd,
            self.nodes_mean,
            self.nodes_sd,
            self.ot_count
        )
    }
}

/// Count of instances whose total fixed count falls in a bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    /// Inclusive lower and exclusive upper bound on the fixed count; the exact
    /// bins use `[c, c]`.
    pub lower: usize,
    pub upper: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub trials: Vec<TrialRecord>,
    pub histogram: Vec<HistogramBin>,
}

/// Mean and sample standard deviation (0 for fewer than two values, NaN for none).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        len => {
            let mean = values.iter().sum::<f64>() / len as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (len - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

/// Histogram of `fixed0 + fixed1` over successful trials: an exact-0 bin,
/// ten equal-width buckets over `(0, m)` and an exact-`m` bin.
pub fn fixed_histogram(trials: &[TrialRecord], m: usize) -> Vec<HistogramBin> {
    let mut bins = Vec::with_capacity(12);
    bins.push(HistogramBin {
        label: "0".into(),
        lower: 0,
        upper: 0,
        count: 0,
    });
    for b in 0..10 {
        let lower = (b * m).div_ceil(10).max(1);
        let upper = ((b + 1) * m).div_ceil(10).min(m);
        bins.push(HistogramBin {
            label: format!("{}-{}%", b * 10, (b + 1) * 10),
            lower,
            upper,
            count: 0,
        });
    }
    bins.push(HistogramBin {
        label: "all".into(),
        lower: m,
        upper: m,
        count: 0,
    });
    for t in trials.iter().filter(|t| t.error.is_none()) {
        let total = t.fixed0 + t.fixed1;
        let idx = if total == 0 {
            0
        } else if total >= m {
            11
        } else {
            1 + (10 * total / m).min(9)
        };
        bins[idx].count += 1;
    }
    bins
}

fn run_trial(cfg: &BenchConfig, regime: Regime, gamma_mult: f64, trial: usize) -> TrialRecord {
    let seed = cfg.seed_base.wrapping_add(trial as u64);
    let gamma = auto_gamma(gamma_mult, cfg.n);
    let mut rec = TrialRecord {
        n: cfg.n,
        m: cfg.m,
        k: cfg.k,
        rho: regime.rho,
        sigma2: regime.sigma2,
        gamma_mult,
        gamma,
        trial,
        seed,
        fixed0: 0,
        fixed1: 0,
        time_s: 0.0,
        gap_percent: 100.0,
        nodes: 0,
        over_time: false,
        ub: f64::NAN,
        v_lower: f64::NAN,
        obj: None,
        lb: None,
        status: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let gen = GenerationConfig::new(
            cfg.m,
            cfg.n,
            cfg.k_true,
            regime.rho,
            regime.sigma2,
            cfg.y_max,
            seed,
        )?;
        let d = generate_synthetic(&gen)?;
        let clock = Instant::now();
        let scr = safe_screen_with(&d, gamma, cfg.k, &ScreenOptions::default())?;
        let screen_time = clock.elapsed().as_secs_f64();
        rec.fixed0 = scr.fixed0.len();
        rec.fixed1 = scr.fixed1.len();
        rec.ub = scr.ub;
        rec.v_lower = scr.certificate.v_lower;
        rec.time_s = screen_time;
        rec.gap_percent = gap_percent(Some(scr.ub), scr.certificate.v_lower);
        rec.over_time = screen_time > cfg.time_limit_s;
        if cfg.solve {
            let report = branch_and_bound(
                &d,
                gamma,
                cfg.k,
                &BnbOptions {
                    time_limit_s: Some(cfg.time_limit_s),
                    ..BnbOptions::default()
                },
            )?;
            rec.time_s = report.wall_time_s;
            rec.gap_percent = report.gap_percent;
            rec.nodes = report.nodes;
            rec.over_time = report.status == SolveStatus::TimeLimit;
            rec.obj = report.obj;
            rec.lb = Some(report.lb);
            rec.status = Some(report.status);
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!(
            "trial n={} rho={} sigma2={} gamma_mult={} trial={} failed: {e}",
            cfg.n,
            regime.rho,
            regime.sigma2,
            gamma_mult,
            trial
        );
        rec.error = Some(e.to_string());
    }
    if !cfg.record_times {
        rec.time_s = 0.0;
    }
    rec
}

fn aggregate(cfg: &BenchConfig, cell: &[TrialRecord]) -> BenchRow {
    let ok: Vec<&TrialRecord> = cell.iter().filter(|t| t.error.is_none()).collect();
    let stat = |f: &dyn Fn(&TrialRecord) -> f64| {
        let values: Vec<f64> = ok.iter().map(|t| f(t)).collect();
        mean_sd(&values)
    };
    let (fixed1_mean, fixed1_sd) = stat(&|t| t.fixed1 as f64);
    let (fixed0_mean, fixed0_sd) = stat(&|t| t.fixed0 as f64);
    let (time_mean, time_sd) = stat(&|t| t.time_s);
    let (gap_mean, gap_sd) = stat(&|t| t.gap_percent);
    let (nodes_mean, nodes_sd) = stat(&|t| t.nodes as f64);
    let first = &cell[0];
    BenchRow {
        n: cfg.n,
        gamma_mult: first.gamma_mult,
        rho: first.rho,
        sigma2: first.sigma2,
        fixed1_mean,
        fixed1_sd,
        fixed0_mean,
        fixed0_sd,
        time_mean,
        time_sd,
        gap_mean,
        gap_sd,
        nodes_mean,
        nodes_sd,
        ot_count: ok.iter().filter(|t| t.over_time).count(),
        failures: cell.len() - ok.len(),
    }
}

/// Worker count: `SPARSEPOIS_THREADS` if set, else the available
/// parallelism, never more than `jobs`.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()));
    cap.min(jobs).max(1)
}

/// Runs every (regime, γ multiplier, trial) combination. Rows are ordered
/// by regime, then multiplier; failed trials are recorded and skipped in the
/// statistics.
pub fn bench_sweep(cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &regime in &cfg.regimes {
        for &mult in &cfg.gamma_multipliers {
            for trial in 0..cfg.trials {
                jobs.push((regime, mult, trial));
            }
        }
    }
    let slots: Vec<Mutex<Option<TrialRecord>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(jobs.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(regime, mult, trial)) = jobs.get(idx) else {
                    break;
                };
                let rec = run_trial(cfg, regime, mult, trial);
                *slots[idx].lock().expect("slot lock") = Some(rec);
            });
        }
    });
    let trials: Vec<TrialRecord> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every job ran"))
        .collect();
    let rows = trials.chunks(cfg.trials).map(|cell| aggregate(cfg, cell)).collect();
    let histogram = fixed_histogram(&trials, cfg.m);
    Ok(BenchOutcome {
        config: cfg.clone(),
        rows,
        trials,
        histogram,
    })
}

/// Writes `bench.csv`, `histogram.csv`, `summary.json` and one JSON per
/// trial under `trials/`.
pub fn write_bench_outputs(outcomes: &[BenchOutcome], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("trials"))?;
    let mut csv = BufWriter::new(File::create(dir.join("bench.csv"))?);
    writeln!(csv, "{CSV_HEADER}")?;
    for row in outcomes.iter().flat_map(|o| &o.rows) {
        writeln!(csv, "{}", row.csv_line())?;
    }
    csv.flush()?;

    let mut hist = BufWriter::new(File::create(dir.join("histogram.csv"))?);
    writeln!(hist, "n,bin,lower,upper,count")?;
    for o in outcomes {
        for b in &o.histogram {
            writeln!(hist, "{},{},{},{},{}", o.config.n, b.label, b.lower, b.upper, b.count)?;
        }
    }
    hist.flush()?;

    for t in outcomes.iter().flat_map(|o| &o.trials) {
        let name = format!(
            "n{}_rho{}_sigma2{}_g{}_t{}.json",
            t.n, t.rho, t.sigma2, t.gamma_mult, t.trial
        );
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("trials").join(name))?), t)?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        configs: Vec<&'a BenchConfig>,
        rows: Vec<&'a BenchRow>,
        histograms: Vec<(usize, &'a [HistogramBin])>,
        trial_count: usize,
        failures: usize,
    }
    let summary = Summary {
        configs: outcomes.iter().map(|o| &o.config).collect(),
        rows: outcomes.iter().flat_map(|o| &o.rows).collect(),
        histograms: outcomes.iter().map(|o| (o.config.n, o.histogram.as_slice())).collect(),
        trial_count: outcomes.iter().map(|o| o.trials.len()).sum(),
        failures: outcomes.iter().flat_map(|o| &o.rows).map(|r| r.failures).sum(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("summary.json"))?), &summary)?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "sparsepois", version, about = "Cardinality-constrained Poisson regression")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV plus a metadata sidecar.
    Generate(GenerateArgs),
    /// Run safe screening and print the fixed indices as JSON.
    Screen(ScreenArgs),
    /// Solve the cardinality-constrained problem by branch-and-bound.
    Solve(SolveArgs),
    /// Write the mixed-integer conic model in the text format.
    Export(ExportArgs),
    /// Run the screening (and optionally solving) sweep.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long = "k-true")]
    k_true: usize,
    #[arg(long, default_value_t = 0.35)]
    rho: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    #[arg(long = "y-max", default_value_t = 10)]
    y_max: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Dataset CSV with header `y,x1,...,xm`.
    data: PathBuf,
    #[arg(long)]
    k: usize,
    /// Regularization strength, or `auto` for multiplier/√n.
    #[arg(long, default_value = "auto")]
    gamma: GammaArg,
    /// Multiplier used by `--gamma auto`.
    #[arg(long = "gamma-mult", default_value_t = 1.0)]
    gamma_mult: f64,
}

impl ProblemArgs {
    fn load(&self) -> Result<(Dataset, f64)> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let d = load_csv(&self.data)?;
        let gamma = self.gamma.resolve(self.gamma_mult, d.n());
        Ok((d, gamma))
    }
}

#[derive(Args, Debug)]
struct ScreenArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Re-solve under the fixing and screen again until nothing changes.
    #[arg(long)]
    repeat: bool,
    /// Output JSON path (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
    /// Skip root screening.
    #[arg(long = "no-screen")]
    no_screen: bool,
    /// Apply the screening rules again at every node.
    #[arg(long = "node-screening")]
    node_screening: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Screen first and add the resulting z_j = 0 / z_j = 1 rows.
    #[arg(long)]
    screen: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    m: usize,
    /// Sample sizes; one block of rows per value.
    #[arg(long, num_args = 1.., default_values_t = [1000usize, 2000])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long = "k-true", default_value_t = 30)]
    k_true: usize,
    #[arg(long = "y-max", default_value_t = 10)]
    y_max: u64,
    #[arg(long = "gamma-mults", value_delimiter = ',', default_values_t = [1.0, 4.0, 16.0])]
    gamma_mults: Vec<f64>,
    /// Comma-separated `rho:sigma2` pairs; defaults to the six standard regimes.
    #[arg(long, value_delimiter = ',')]
    regimes: Vec<Regime>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long = "time-limit", default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long = "seed-base", default_value_t = 0)]
    seed_base: u64,
    /// Also run branch-and-bound on every instance.
    #[arg(long)]
    solve: bool,
    /// Report all times as zero, making the output reproducible byte for byte.
    #[arg(long = "no-times")]
    no_times: bool,
    #[arg(short = 'o', long = "out-dir", default_value = "bench_out")]
    out_dir: PathBuf,
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => {
            let cfg = GenerationConfig::new(a.m, a.n, a.k_true, a.rho, a.sigma2, a.y_max, a.seed)?;
            let d = generate_synthetic(&cfg)?;
            save_csv(&d, &a.output)?;
            log::info!("wrote {} rows x {} features to {}", d.n(), d.m(), a.output.display());
        }
        Command::Screen(a) => {
            let (d, gamma) = a.problem.load()?;
            let opts = ScreenOptions {
                repeat: a.repeat,
                ..ScreenOptions::default()
            };
            let res = safe_screen_with(&d, gamma, a.problem.k, &opts)?;
            #[derive(Serialize)]
            struct Out {
                gamma: f64,
                k: usize,
                #[serde(flatten)]
                record: crate::screen::ScreenRecord,
            }
            write_json(
                &Out {
                    gamma,
                    k: a.problem.k,
                    record: res.record(),
                },
                a.output.as_deref(),
            )?;
        }
        Command::Solve(a) => {
            let (d, gamma) = a.problem.load()?;
            let opts = BnbOptions {
                time_limit_s: a.time_limit,
                node_limit: a.node_limit,
                screen_first: !a.no_screen,
                node_screening: a.node_screening,
                ..BnbOptions::default()
            };
            let report = branch_and_bound(&d, gamma, a.problem.k, &opts)?;
            #[derive(Serialize)]
            struct Out {
                gamma: f64,
                k: usize,
                #[serde(flatten)]
                report: crate::bnb::SolveReport,
            }
            write_json(
                &Out {
                    gamma,
                    k: a.problem.k,
                    report,
                },
                a.output.as_deref(),
            )?;
        }
        Command::Export(a) => {
            let (d, gamma) = a.problem.load()?;
            let (fixed0, fixed1) = if a.screen {
                let res = safe_screen_with(&d, gamma, a.problem.k, &ScreenOptions::default())?;
                (res.fixed0, res.fixed1)
            } else {
                (Vec::new(), Vec::new())
            };
            let model = build_conic_model(&d, gamma, a.problem.k, &fixed0, &fixed1)?;
            export_model(&model, &a.output)?;
            log::info!("wrote conic model to {}", a.output.display());
        }
        Command::Bench(a) => {
            let regimes = if a.regimes.is_empty() {
                default_regimes()
            } else {
                a.regimes
            };
            let mut outcomes = Vec::new();
            for &n in &a.n {
                let cfg = BenchConfig {
                    m: a.m,
                    n,
                    k: a.k,
                    k_true: a.k_true,
                    y_max: a.y_max,
                    gamma_multipliers: a.gamma_mults.clone(),
                    regimes: regimes.clone(),
                    trials: a.trials,
                    time_limit_s: a.time_limit,
                    seed_base: a.seed_base,
                    solve: a.solve,
                    record_times: !a.no_times,
                };
                outcomes.push(bench_sweep(&cfg)?);
            }
            write_bench_outputs(&outcomes, &a.out_dir)?;
            log::info!("wrote sweep results to {}", a.out_dir.display());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 on
/// runtime errors.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_argument() {
        assert_eq!("auto".parse::<GammaArg>(), Ok(GammaArg::Auto));
        assert_eq!("0.5".parse::<GammaArg>(), Ok(GammaArg::Value(0.5)));
        assert!("-1".parse::<GammaArg>().is_err());
        assert!("x".parse::<GammaArg>().is_err());
        assert_eq!(GammaArg::Auto.resolve(1.0, 100), 0.1);
        assert_eq!(auto_gamma(1.0, 2000), 1.0 / 2000f64.sqrt());
    }

    #[test]
    fn regime_parsing_and_defaults() {
        assert_eq!("0.35:0.01".parse::<Regime>(), Ok(Regime { rho: 0.35, sigma2: 0.01 }));
        assert!("0.35".parse::<Regime>().is_err());
        assert_eq!(default_regimes().len(), 6);
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
        assert!(mean_sd(&[]).0.is_nan());
    }

    #[test]
    fn histogram_bins() {
        let mk = |f0: usize, f1: usize| TrialRecord {
            n: 1,
            m: 100,
            k: 1,
            rho: 0.0,
            sigma2: 0.0,
            gamma_mult: 1.0,
            gamma: 1.0,
            trial: 0,
            seed: 0,
            fixed0: f0,
            fixed1: f1,
            time_s: 0.0,
            gap_percent: 0.0,
            nodes: 0,
            over_time: false,
            ub: 0.0,
            v_lower: 0.0,
            obj: None,
            lb: None,
            status: None,
            error: None,
        };
        let h = fixed_histogram(&[mk(0, 0), mk(5, 0), mk(95, 4), mk(99, 1), mk(10, 0)], 100);
        assert_eq!(h.len(), 12);
        let counts: Vec<usize> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!((h[1].lower, h[1].upper), (1, 10));
        assert_eq!((h[10].lower, h[10].upper), (90, 100));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run_command(["sparsepois"]), 2);
        assert_eq!(run_command(["sparsepois", "frobnicate"]), 2);
        assert_eq!(run_command(["sparsepois", "screen", "d.csv", "--gamma", "nope", "--k", "1"]), 2);
        assert_eq!(run_command(["sparsepois", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_with_one() {
        assert_eq!(
            run_command(["sparsepois", "screen", "/nonexistent/d.csv", "--k", "1"]),
            1
        );
    }
}
