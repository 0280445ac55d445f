//! Count datasets, CSV persistence and the synthetic generator.
//!
//! The generator draws `k_true` active features uniformly without
//! replacement, samples each feature row from an AR(1) Gaussian process with
//! `Cov(x_j, x_l) = rho^|j-l|`, and produces counts
//! `y_i = min(y_max, round(exp(w_trueᵀx_i / sqrt(w_trueᵀ Σ w_true) + eps_i)))`
//! with `eps_i ~ N(0, sigma2)`.
//!
//! Random streams: every draw comes from ChaCha8 seeded with `seed`, with the
//! stream id selecting the sub-draw (0 = support, 1 = features, 2.. = noise).
//! Normals use the polar-free Box–Muller transform on 53-bit uniforms, taking
//! the cosine branch first and the sine branch second.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STREAM_SUPPORT: u64 = 0;
const STREAM_FEATURES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const MAX_NOISE_REDRAWS: u64 = 64;

/// Record of how a synthetic dataset was produced. Serialized verbatim as the
/// `.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub m: usize,
    pub n: usize,
    pub k_true: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub y_max: u64,
    pub seed: u64,
    /// Zero-based indices of the true support, ascending.
    pub true_support: Vec<usize>,
}

/// Dense design matrix (row-major, `n × m`) with non-negative integer counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    m: usize,
    x: Vec<f64>,
    y: Vec<u64>,
    meta: Option<GenerationMeta>,
}

impl Dataset {
    /// Builds a dataset from a row-major `n × m` buffer.
    pub fn new(x: Vec<f64>, y: Vec<u64>, m: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "dataset needs n >= 1 and m >= 1 (got n = {n}, m = {m})"
            )));
        }
        if x.len() != n * m {
            return Err(Error::DimensionMismatch(format!(
                "feature buffer has {} entries, expected {n} x {m}",
                x.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "non-finite feature at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        Ok(Self {
            n,
            m,
            x,
            y,
            meta: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<u64>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} counts",
                rows.len(),
                y.len()
            )));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        Self::new(rows.concat(), y, m)
    }

    pub fn with_meta(mut self, meta: GenerationMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.m + j]
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn meta(&self) -> Option<&GenerationMeta> {
        self.meta.as_ref()
    }

    pub fn total_count(&self) -> u64 {
        self.y.iter().sum()
    }

    pub fn mean_count(&self) -> f64 {
        self.total_count() as f64 / self.n as f64
    }

    /// Writes `X w + b` into `out`.
    ///
    /// Sparse `w` (fewer than a quarter nonzero) takes a gather path; the
    /// result is identical up to summation order, which is fixed either way.
    pub fn linear_predictors_into(&self, w: &[f64], b: f64, out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.m);
        debug_assert_eq!(out.len(), self.n);
        let nz: Vec<usize> = (0..self.m).filter(|&j| w[j] != 0.0).collect();
        if nz.len() * 4 < self.m {
            for (i, o) in out.iter_mut().enumerate() {
                let row = self.row(i);
                *o = b + nz.iter().map(|&j| row[j] * w[j]).sum::<f64>();
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = b + dot(self.row(i), w);
            }
        }
    }

    pub fn linear_predictors(&self, w: &[f64], b: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.linear_predictors_into(w, b, &mut out);
        out
    }

    /// Writes `Xᵀ r` into `out`, accumulating rows in index order.
    pub fn transpose_mul_into(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        debug_assert_eq!(out.len(), self.m);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (o, &xij) in out.iter_mut().zip(self.row(i)) {
                *o += ri * xij;
            }
        }
    }

    /// Copy of the dataset restricted to `cols` (in the given order). Metadata
    /// is dropped because it refers to the original column indexing.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let k = cols.len();
        let mut x = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            let row = self.row(i);
            x.extend(cols.iter().map(|&j| row[j]));
        }
        Dataset {
            n: self.n,
            m: k,
            x,
            y: self.y.clone(),
            meta: None,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Validated parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub m: usize,
    pub n: usize,
    pub k_true: usize,
    pub rho: f64,
    pub sigma2: f64,
    pub y_max: u64,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn new(
        m: usize,
        n: usize,
        k_true: usize,
        rho: f64,
        sigma2: f64,
        y_max: u64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            m,
            n,
            k_true,
            rho,
            sigma2,
            y_max,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.n == 0 {
            return bad(format!("m and n must be positive (m = {}, n = {})", self.m, self.n));
        }
        if self.k_true == 0 || self.k_true > self.m {
            return bad(format!("k_true = {} must lie in [1, m = {}]", self.k_true, self.m));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho = {} must lie in [0, 1)", self.rho));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2 = {} must be finite and non-negative", self.sigma2));
        }
        if self.y_max == 0 {
            return bad("y_max must be positive".into());
        }
        Ok(())
    }
}

/// Seeded ChaCha8 stream producing standard normals by Box–Muller.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on (0, 1], 53 bits.
    fn open_uniform(&mut self) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        1.0 - u
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_uniform();
        let u2 = self.open_uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

/// One draw from `N(0, Σ)` with `Σ_jl = rho^|j-l|` via the stationary AR(1)
/// recursion.
pub fn sample_ar1_row(rho: f64, m: usize, normals: &mut NormalStream) -> Vec<f64> {
    let innovation = (1.0 - rho * rho).sqrt();
    let mut row = Vec::with_capacity(m);
    let mut prev = 0.0;
    for j in 0..m {
        let eps = normals.next_normal();
        let v = if j == 0 { eps } else { rho * prev + innovation * eps };
        row.push(v);
        prev = v;
    }
    row
}

/// `w_trueᵀ Σ w_true` for a 0/1 indicator on `support`, computed exactly.
pub fn indicator_quadratic_form(support: &[usize], rho: f64) -> f64 {
    let mut total = 0.0;
    for &a in support {
        for &b in support {
            total += rho.powi(a.abs_diff(b) as i32);
        }
    }
    total
}

fn draw_support(cfg: &GenerationConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SUPPORT);
    // Partial Fisher–Yates over 0..m.
    let mut pool: Vec<usize> = (0..cfg.m).collect();
    for i in 0..cfg.k_true {
        let j = rng.gen_range(i..cfg.m);
        pool.swap(i, j);
    }
    let mut support = pool[..cfg.k_true].to_vec();
    support.sort_unstable();
    support
}

/// Synthetic dataset following the AR(1)-design, clipped log-normal count
/// construction described in the module docs.
pub fn generate_synthetic(cfg: &GenerationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let support = draw_support(cfg);
    let scale = indicator_quadratic_form(&support, cfg.rho).sqrt();

    let mut features = NormalStream::new(cfg.seed, STREAM_FEATURES);
    let mut x = Vec::with_capacity(cfg.n * cfg.m);
    let mut signal = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let row = sample_ar1_row(cfg.rho, cfg.m, &mut features);
        signal.push(support.iter().map(|&j| row[j]).sum::<f64>() / scale);
        x.extend_from_slice(&row);
    }

    let sigma = cfg.sigma2.sqrt();
    let mut redraw = 0;
    let y = loop {
        let mut noise = NormalStream::new(cfg.seed, STREAM_NOISE + redraw);
        let y: Vec<u64> = signal
            .iter()
            .map(|&s| round_count(s + sigma * noise.next_normal(), cfg.y_max))
            .collect();
        if y.iter().any(|&v| v > 0) {
            break y;
        }
        redraw += 1;
        log::warn!(
            "all generated counts are zero (seed {}); redrawing noise from stream {}",
            cfg.seed,
            STREAM_NOISE + redraw
        );
        if redraw >= MAX_NOISE_REDRAWS {
            return Err(Error::DegenerateCounts);
        }
    };

    let meta = GenerationMeta {
        m: cfg.m,
        n: cfg.n,
        k_true: cfg.k_true,
        rho: cfg.rho,
        sigma2: cfg.sigma2,
        y_max: cfg.y_max,
        seed: cfg.seed,
        true_support: support,
    };
    Ok(Dataset::new(x, y, cfg.m)?.with_meta(meta))
}

/// `round(exp(eta))` (half away from zero), clamped to `y_max`.
fn round_count(eta: f64, y_max: u64) -> u64 {
    let mean = eta.exp();
    if !(mean < y_max as f64) {
        return y_max;
    }
    (mean.round() as u64).min(y_max)
}

/// Path of the metadata sidecar: `d.csv` → `d.meta.json`.
pub fn meta_sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `y,x1,...,xm` CSV plus the metadata sidecar when present.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "y")?;
    for j in 1..=dataset.m {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for i in 0..dataset.n {
        write!(out, "{}", dataset.y[i])?;
        for v in dataset.row(i) {
            // `Display` for f64 is the shortest string that round-trips.
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    if let Some(meta) = &dataset.meta {
        let sidecar = BufWriter::new(File::create(meta_sidecar_path(path))?);
        serde_json::to_writer_pretty(sidecar, meta)?;
    }
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    if names.first() != Some(&"y") || names.len() < 2 {
        return Err(parse_err(1, "header must be `y,x1,...,xm` with m >= 1".into()));
    }
    for (j, name) in names.iter().enumerate().skip(1) {
        if *name != format!("x{j}") {
            return Err(parse_err(1, format!("malformed header: expected `x{j}`, found `{name}`")));
        }
    }
    let m = names.len() - 1;

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != m + 1 {
            return Err(parse_err(
                lineno,
                format!("ragged row: expected {} fields, found {}", m + 1, fields.len()),
            ));
        }
        let count: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("non-integer count `{}`", fields[0])))?;
        if count < 0 {
            return Err(parse_err(lineno, format!("negative count {count}")));
        }
        y.push(count as u64);
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                parse_err(lineno, format!("feature x{} is not a number: `{f}`", j + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("feature x{} is not finite", j + 1)));
            }
            x.push(v);
        }
    }
    if y.is_empty() {
        return Err(parse_err(2, "no observations".into()));
    }

    let mut dataset = Dataset::new(x, y, m)?;
    let sidecar = meta_sidecar_path(path);
    if sidecar.exists() {
        let meta: GenerationMeta = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
        if meta.m != dataset.m || meta.n != dataset.n {
            return Err(Error::DimensionMismatch(format!(
                "metadata sidecar describes {} x {}, data is {} x {}",
                meta.n, meta.m, dataset.n, dataset.m
            )));
        }
        dataset.meta = Some(meta);
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cov(rho: f64, m: usize, draws: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut normals = NormalStream::new(seed, 7);
        let mut sum = vec![0.0; m];
        let mut cross = vec![vec![0.0; m]; m];
        for _ in 0..draws {
            let row = sample_ar1_row(rho, m, &mut normals);
            for a in 0..m {
                sum[a] += row[a];
                for b in 0..m {
                    cross[a][b] += row[a] * row[b];
                }
            }
        }
        let nf = draws as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let cov = (0..m)
            .map(|a| (0..m).map(|b| cross[a][b] / nf - mean[a] * mean[b]).collect())
            .collect();
        (mean, cov)
    }

    #[test]
    fn ar1_rows_have_identity_covariance_at_rho_zero() {
        let (mean, cov) = sample_cov(0.0, 4, 100_000, 11);
        for a in 0..4 {
            assert!(mean[a].abs() < 0.02);
            assert!((cov[a][a] - 1.0).abs() < 0.02);
            for b in 0..4 {
                if a != b {
                    assert!(cov[a][b].abs() < 0.02, "cov[{a}][{b}] = {}", cov[a][b]);
                }
            }
        }
    }

    #[test]
    fn ar1_rows_match_toeplitz_covariance() {
        let (_, cov) = sample_cov(0.7, 3, 100_000, 5);
        assert!((cov[0][2] - 0.49).abs() < 0.02, "{}", cov[0][2]);

        let (mean, cov) = sample_cov(0.35, 5, 100_000, 9);
        for a in 0..5 {
            assert!(mean[a].abs() < 0.02);
            for b in 0..5 {
                let expected = 0.35f64.powi(a.abs_diff(b) as i32);
                assert!((cov[a][b] - expected).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn ar1_rows_are_deterministic() {
        let a = sample_ar1_row(0.5, 16, &mut NormalStream::new(3, 1));
        let b = sample_ar1_row(0.5, 16, &mut NormalStream::new(3, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn generator_respects_sparsity_and_cap() {
        let cfg = GenerationConfig::new(200, 100, 30, 0.35, 0.01, 10, 42).unwrap();
        let d = generate_synthetic(&cfg).unwrap();
        let meta = d.meta().unwrap();
        assert_eq!(meta.true_support.len(), 30);
        assert!(meta.true_support.windows(2).all(|w| w[0] < w[1]));
        assert!(d.y().iter().all(|&v| v <= 10));
        assert_eq!(d.n(), 100);
        assert_eq!(d.m(), 200);
        assert_eq!(d, generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn generator_rejects_bad_configs() {
        assert!(GenerationConfig::new(5, 10, 6, 0.0, 0.1, 10, 0).is_err());
        assert!(GenerationConfig::new(5, 10, 2, 0.0, -0.1, 10, 0).is_err());
        assert!(GenerationConfig::new(5, 10, 2, 1.0, 0.1, 10, 0).is_err());
        assert!(GenerationConfig::new(5, 10, 0, 0.0, 0.1, 10, 0).is_err());
    }

    #[test]
    fn quadratic_form_is_exact() {
        assert_eq!(indicator_quadratic_form(&[0, 1], 0.0), 2.0);
        let q = indicator_quadratic_form(&[0, 2], 0.5);
        assert!((q - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_count(2.5f64.ln(), 10), 3);
        assert_eq!(round_count(f64::INFINITY, 10), 10);
        assert_eq!(round_count(-50.0, 10), 0);
    }

    #[test]
    fn csv_reads_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "y,x1,x2\n3,0.5,-1.0\n").unwrap();
        let d = load_csv(&path).unwrap();
        assert_eq!((d.n(), d.m()), (1, 2));
        assert_eq!(d.y(), &[3]);
        assert_eq!(d.row(0), &[0.5, -1.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let cases = [
            ("y,x1\n1,0.5\n-1,0.2\n", 3, "negative count"),
            ("y,x1\n1.5,0.5\n", 2, "non-integer"),
            ("y,x1,x2\n1,0.5\n", 2, "ragged"),
            ("count,x1\n1,0.5\n", 1, "header"),
            ("y,x1\n1,abc\n", 2, "not a number"),
        ];
        for (body, want_line, needle) in cases {
            std::fs::write(&path, body).unwrap();
            match load_csv(&path) {
                Err(Error::Parse { line, message, .. }) => {
                    assert_eq!(line, want_line, "{body:?}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected parse error for {body:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn csv_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cfg = GenerationConfig::new(7, 13, 2, 0.7, 0.1, 10, 8).unwrap();
        let d = generate_synthetic(&cfg).unwrap();
        save_csv(&d, &path).unwrap();
        assert!(dir.path().join("d.meta.json").exists());
        assert_eq!(load_csv(&path).unwrap(), d);
    }

    #[test]
    fn sparse_and_dense_predictors_agree() {
        let cfg = GenerationConfig::new(40, 9, 3, 0.2, 0.1, 10, 1).unwrap();
        let d = generate_synthetic(&cfg).unwrap();
        let mut w = vec![0.0; 40];
        w[3] = 0.5;
        w[17] = -1.25;
        let sparse = d.linear_predictors(&w, 0.3);
        for i in 0..d.n() {
            let dense = 0.3 + dot(d.row(i), &w);
            assert!((sparse[i] - dense).abs() < 1e-14);
        }
    }
}
