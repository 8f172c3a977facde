//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for unreadable input, unwritable output or
//! other failures, 2 for degenerate input and usage errors.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, AccuracyReport, SyntheticSuiteConfig};
use crate::forward::{ForwardConfig, ForwardModel};
use crate::inference::{CausalModel, InferenceConfig, InferenceResult};
use crate::rng::derive_seed;
use crate::spectra::{build_grid_covariance, sample_field, GridConfig, PowerSpectrum};
use crate::{Error, Result};

/// Environment variable naming the default pair-collection directory.
pub const TCEP_DIR_ENV: &str = "CAUSAL_FIELD_TCEP_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "causal-field",
    version,
    about = "Bayesian cause-effect inference for pairs of variables"
)]
pub struct Cli {
    /// Worker threads for pair evaluation; 0 uses all available cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic pairs drawn from the forward model.
    Generate(GenerateArgs),
    /// Decide the causal direction of one pair.
    Infer(InferArgs),
    /// Accuracy on forward-model pairs, optionally swept over settings.
    BenchSynthetic(BenchSyntheticArgs),
    /// Weighted accuracy on a directory of real cause-effect pairs.
    BenchTcep(BenchTcepArgs),
    /// Sample prior fields and their normalized densities for plotting.
    SampleFields(SampleFieldsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Tsv,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 512)]
    pub n_bins: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub beta_amplitude: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta_exponent: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub f_amplitude: f64,
    #[arg(long, default_value_t = 4.0)]
    pub f_exponent: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_variance: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Cosine modes of the effect kernel [default: n-bins].
    #[arg(long)]
    pub kernel_modes: Option<usize>,
}

impl ModelArgs {
    pub fn config(&self) -> Result<InferenceConfig> {
        let mut cfg = InferenceConfig::with_bins(self.n_bins);
        cfg.grid = GridConfig::new(self.n_bins)?;
        cfg.beta_spectrum = PowerSpectrum::new(self.beta_amplitude, self.beta_exponent)?;
        cfg.f_spectrum = PowerSpectrum::new(self.f_amplitude, self.f_exponent)?;
        cfg.noise_variance = self.noise_variance;
        cfg.rho = self.rho;
        cfg.kernel_modes = self.kernel_modes;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ForwardArgs {
    #[arg(long, default_value_t = 512)]
    pub fwd_n_bins: usize,
    /// [default: fwd-n-bins]
    #[arg(long)]
    pub fwd_beta_amplitude: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub fwd_beta_exponent: f64,
    /// [default: fwd-n-bins]
    #[arg(long)]
    pub fwd_f_amplitude: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub fwd_f_exponent: f64,
    #[arg(long, default_value_t = 0.05)]
    pub fwd_noise_variance: f64,
    #[arg(long, default_value_t = 300)]
    pub target_samples: usize,
}

impl ForwardArgs {
    pub fn config(&self, seed: u64) -> Result<ForwardConfig> {
        let mut cfg = ForwardConfig::with_bins(self.fwd_n_bins);
        let amp = self.fwd_n_bins as f64;
        cfg.beta_spectrum = PowerSpectrum::new(
            self.fwd_beta_amplitude.unwrap_or(amp),
            self.fwd_beta_exponent,
        )?;
        cfg.f_spectrum =
            PowerSpectrum::new(self.fwd_f_amplitude.unwrap_or(amp), self.fwd_f_exponent)?;
        cfg.noise_variance = self.fwd_noise_variance;
        cfg.target_samples = self.target_samples;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    pub n_pairs: usize,
    /// Directory receiving the pair files.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub forward: ForwardArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Two-column numeric file.
    pub input: PathBuf,
    /// Field delimiter; autodetected from tab, comma or whitespace.
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchSyntheticArgs {
    #[arg(long, default_value_t = 100)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Forward noise variances to sweep.
    #[arg(long, value_delimiter = ',')]
    pub noise_list: Vec<f64>,
    /// Bin counts to sweep (forward and inference together).
    #[arg(long, value_delimiter = ',')]
    pub bins_list: Vec<usize>,
    /// Target sample sizes to sweep.
    #[arg(long, value_delimiter = ',')]
    pub samples_list: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub forward: ForwardArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchTcepArgs {
    /// Collection directory [env: CAUSAL_FIELD_TCEP_DIR].
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Metadata file [default: <dir>/pairmeta.txt].
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub cap: usize,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SampleFieldsArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0, 6.0])]
    pub exponents: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub n_fields: usize,
    #[arg(long, default_value_t = 512)]
    pub n_bins: usize,
    /// [default: n-bins]
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, S>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(&cli.command, out, err)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::DegenerateColumn { .. } | Error::Degenerate(_) => 2,
        _ => 1,
    }
}

fn execute(
    cmd: &Command,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::BenchSynthetic(a) => cmd_bench_synthetic(a, out, err),
        Command::BenchTcep(a) => cmd_bench_tcep(a, out, err),
        Command::SampleFields(a) => cmd_sample_fields(a, out),
    }
}

fn emit(text: &str, output: Option<&Path>, out: &mut (dyn Write + Send)) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_generate(a: &GenerateArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = a.forward.config(a.seed)?;
    let model = ForwardModel::new(&cfg)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::from("pair\tdirection\tn_samples\n");
    let mut meta = String::new();
    for i in 0..a.n_pairs {
        let id = format!("{:04}", i + 1);
        let pair = model.sample(derive_seed(a.seed, i as u64))?;
        let mut body = String::new();
        for (x, y) in pair.x.iter().zip(&pair.y) {
            let _ = writeln!(body, "{x}\t{y}");
        }
        let path = dir.join(format!("pair{id}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(
            labels,
            "pair{id}\t{}\t{}",
            pair.true_direction,
            pair.x.len()
        );
        let (c, e) = match pair.true_direction {
            crate::Direction::XToY => (1, 2),
            crate::Direction::YToX => (2, 1),
        };
        let _ = writeln!(meta, "{id} {c} {c} {e} {e} 1");
    }
    let manifest = format!(
        "n_pairs={}\nseed={}\nn_bins={} Ñ={} ς²={}\nbeta_spectrum={}/(q^{}+1)\nf_spectrum={}/(q^{}+1)\n",
        a.n_pairs,
        a.seed,
        cfg.n_bins,
        cfg.target_samples,
        cfg.noise_variance,
        cfg.beta_spectrum.amplitude(),
        cfg.beta_spectrum.exponent(),
        cfg.f_spectrum.amplitude(),
        cfg.f_spectrum.exponent(),
    );
    for (name, text) in [
        ("labels.tsv", &labels),
        (bench::TCEP_META_FILE, &meta),
        ("manifest.txt", &manifest),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let _ = writeln!(out, "wrote {} pairs to {}", a.n_pairs, dir.display());
    Ok(())
}

/// Splits a data line on `delim`, or on runs of whitespace when `None`.
fn split_fields(line: &str, delim: Option<char>) -> Vec<&str> {
    match delim {
        Some(d) if !d.is_whitespace() => line.split(d).map(str::trim).collect(),
        _ => line.split_whitespace().collect(),
    }
}

fn detect_delimiter(lines: &[&str]) -> Option<char> {
    let first = lines.first()?;
    if first.contains('\t') {
        Some('\t')
    } else if first.contains(',') {
        Some(',')
    } else {
        None
    }
}

/// Reads the first two numeric columns of a delimited text file. A leading
/// non-numeric row is taken as a header; any later one is an error.
pub fn read_pair_file(path: &Path, delimiter: Option<char>) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let delim = delimiter.or_else(|| detect_delimiter(&lines));
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (n, line) in lines.iter().enumerate() {
        let fields = split_fields(line, delim);
        let parsed: Option<(f64, f64)> = match fields.as_slice() {
            [a, b, ..] => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        match parsed {
            Some((a, b)) => {
                x.push(a);
                y.push(b);
            }
            None if n == 0 => continue,
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {} is not two numeric fields: {line:?}", n + 1),
                })
            }
        }
    }
    if x.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no numeric rows".into(),
        });
    }
    Ok((x, y))
}

fn infer_tsv(r: &InferenceResult) -> String {
    let mut s = format!(
        "decided_direction\t{}\nlog_odds\t{}\n",
        r.decided_direction, r.log_odds
    );
    s.push_str("term\tX->Y\tY->X\n");
    for ((name, a), (_, b)) in r
        .breakdown_xy
        .terms()
        .into_iter()
        .zip(r.breakdown_yx.terms())
    {
        let _ = writeln!(s, "{name}\t{a}\t{b}");
    }
    s
}

fn infer_text(r: &InferenceResult) -> String {
    let mut s = format!(
        "direction: {}\nlog_odds:  {:.6}\n\n",
        r.decided_direction, r.log_odds
    );
    let _ = writeln!(s, "{:<22}  {:>18}  {:>18}", "term", "X->Y", "Y->X");
    for ((name, a), (_, b)) in r
        .breakdown_xy
        .terms()
        .into_iter()
        .zip(r.breakdown_yx.terms())
    {
        let _ = writeln!(s, "{name:<22}  {a:>18.6}  {b:>18.6}");
    }
    s
}

fn cmd_infer(a: &InferArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let (x, y) = read_pair_file(&a.input, a.delimiter)?;
    let model = CausalModel::new(&a.model.config()?)?;
    let r = model.infer(&x, &y)?;
    let text = match a.format {
        Format::Text => infer_text(&r),
        Format::Json => to_json(&r),
        Format::Tsv => infer_tsv(&r),
    };
    emit(&text, a.output.as_deref(), out)
}

fn emit_reports(
    reports: &[AccuracyReport],
    format: Format,
    output: Option<&Path>,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    let text = match format {
        Format::Text => bench::render_table(reports),
        Format::Json => to_json(&reports),
        Format::Tsv => bench::render_tsv(reports),
    };
    emit(&text, output, out)?;
    if format != Format::Text {
        let _ = write!(err, "{}", bench::render_table(reports));
    }
    Ok(())
}

/// Sweep points: every noise value, then every bin count, then every sample
/// size, each varied alone from the base setting. No lists means one point.
fn synthetic_points(a: &BenchSyntheticArgs) -> Result<Vec<SyntheticSuiteConfig>> {
    let base_forward = a.forward.config(a.seed)?;
    let base_inference = a.model.config()?;
    let base = SyntheticSuiteConfig {
        n_pairs: a.n_pairs,
        forward: base_forward,
        inference: base_inference,
        master_seed: a.seed,
    };
    let mut points = Vec::new();
    for &s2 in &a.noise_list {
        let mut p = base.clone();
        p.forward.noise_variance = s2;
        points.push(p);
    }
    for &m in &a.bins_list {
        let mut p = base.clone();
        let fwd = ForwardArgs {
            fwd_n_bins: m,
            ..a.forward.clone()
        };
        p.forward = ForwardConfig {
            noise_variance: base.forward.noise_variance,
            target_samples: base.forward.target_samples,
            ..fwd.config(a.seed)?
        };
        p.inference.grid = GridConfig::new(m)?;
        points.push(p);
    }
    for &n in &a.samples_list {
        let mut p = base.clone();
        p.forward.target_samples = n;
        points.push(p);
    }
    if points.is_empty() {
        points.push(base);
    }
    for p in &points {
        p.forward.validate()?;
    }
    Ok(points)
}

fn cmd_bench_synthetic(
    a: &BenchSyntheticArgs,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    let reports = synthetic_points(a)?
        .iter()
        .map(bench::run_synthetic_suite)
        .collect::<Result<Vec<_>>>()?;
    emit_reports(&reports, a.format, a.output.as_deref(), out, err)
}

fn cmd_bench_tcep(
    a: &BenchTcepArgs,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    let dir = match &a.dir {
        Some(d) => d.clone(),
        None => std::env::var_os(TCEP_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "no collection directory: pass --dir or set {TCEP_DIR_ENV}"
                ))
            })?,
    };
    let meta = a
        .meta
        .clone()
        .unwrap_or_else(|| dir.join(bench::TCEP_META_FILE));
    if !meta.is_file() {
        return Err(Error::InvalidConfig(format!(
            "metadata file not found: {}",
            meta.display()
        )));
    }
    let collection = bench::load_tcep_with_meta(&dir, &meta, usize::MAX, a.seed)?;
    let _ = writeln!(
        err,
        "loaded {} pairs ({} excluded as multivariate, {} rows skipped)",
        collection.records.len(),
        collection.excluded.len(),
        collection.skipped_rows
    );
    let report = bench::run_tcep_suite(
        &collection.records,
        &a.model.config()?,
        a.repeats,
        a.cap,
        a.seed,
    )?;
    emit_reports(&[report], a.format, a.output.as_deref(), out, err)
}

fn cmd_sample_fields(a: &SampleFieldsArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let grid = GridConfig::new(a.n_bins)?;
    let amplitude = a.amplitude.unwrap_or(a.n_bins as f64);
    let mut s = String::from("exponent\tfield\tz\tbeta\tdensity\n");
    for (ei, &n) in a.exponents.iter().enumerate() {
        let cov = build_grid_covariance(&PowerSpectrum::new(amplitude, n)?, &grid)?;
        for f in 0..a.n_fields {
            let beta = sample_field(&cov, derive_seed(derive_seed(a.seed, ei as u64), f as u64));
            let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = beta.iter().map(|b| (b - max).exp()).collect();
            let total: f64 = w.iter().sum();
            for (j, (b, wj)) in beta.iter().zip(&w).enumerate() {
                let _ = writeln!(s, "{n}\t{f}\t{}\t{b}\t{}", grid.midpoint(j), wj / total);
            }
        }
    }
    emit(&s, a.output.as_deref(), out)
}
