//! The `coint` command line.
//!
//! Every subcommand writes machine-readable output (CSV or JSON). Exit codes:
//! 0 on success (for `test`: the null is not rejected), 1 when `test`
//! rejects, 2 on usage or runtime errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dgp::{generate_panel, local_direction, EcmConfig, InnovationSpec, Panel};
use crate::error::{Error, Result};
use crate::harness::{run_study, write_outputs, CritvalSettings, StudyConfig, FULL_SCALE_REPS, FULL_SCALE_T};
use crate::limit::{labf_diagnostic, limit_power, CritvalCache, CritvalMode, LimitSpec, DEFAULT_GRID};
use crate::linalg::{from_rows, Mat, Vector};
use crate::pipeline::{run_test, CritvalSource, TestOptions};
use crate::stats::{Flavor, TestKind, TrendCase};

/// Environment variable naming the critical-value cache file.
pub const CACHE_ENV: &str = "COINT_CACHE";

#[derive(Debug, Parser)]
#[command(name = "coint", version, about = "Semiparametric cointegration rank tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one error-correction panel and write it as CSV.
    Simulate(SimulateArgs),
    /// Test for no cointegration on a CSV panel; prints a JSON result.
    Test(TestArgs),
    /// Critical values of the trace tests at a given (Σ, J).
    Critvals(CritvalsArgs),
    /// Monte Carlo size and power study; writes power.csv and study.json.
    Power(PowerArgs),
    /// Point-optimal power envelope in the limit experiment, as CSV.
    Envelope(EnvelopeArgs),
    /// Convergence of the Gaussian central sequence to its limit, as JSON.
    DiagLabf(LabfArgs),
}

/// Innovation distributions with unit covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Gaussian,
    /// Multivariate Student t with 3 degrees of freedom.
    T3,
    /// Independent skewed t components, 4 degrees of freedom, slant 2.
    Skewt4,
}

impl Dist {
    pub fn spec(self, p: usize) -> InnovationSpec {
        let sigma = Mat::identity(p, p);
        match self {
            Dist::Gaussian => InnovationSpec::gaussian(sigma),
            Dist::T3 => InnovationSpec::student_t(3.0, sigma),
            Dist::Skewt4 => InnovationSpec::skewed_t(4.0, vec![2.0; p], sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CritvalChoice {
    /// Simulate at the exact plug-in (Σ̂, Ĵ).
    Simulate,
    /// Shared tables keyed by the plug-in fingerprint.
    Cache,
    /// Same as `simulate`.
    Exact,
}

impl CritvalChoice {
    fn mode(self) -> CritvalMode {
        match self {
            CritvalChoice::Cache => CritvalMode::Cache,
            CritvalChoice::Simulate | CritvalChoice::Exact => CritvalMode::Exact,
        }
    }
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    /// Dimension of the series.
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Number of observations.
    #[arg(long = "T")]
    t: usize,
    /// Local parameter; the feedback matrix is c/T times [[1, 1, ...], 0, ...].
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    c: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    dist: Dist,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Level, comma separated (zeros by default).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Trend slope per period, comma separated (zeros by default).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tau: Option<Vec<f64>>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct CritvalArgs {
    /// Critical-value cache file (defaults to $COINT_CACHE).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Time steps per simulated limit path.
    #[arg(long, default_value_t = CritvalSettings::default().grid_n)]
    grid: usize,
    /// Null replications per table.
    #[arg(long = "cv-reps", default_value_t = CritvalSettings::default().reps)]
    cv_reps: usize,
    /// Seed for the null tables.
    #[arg(long = "cv-seed", default_value_t = CritvalSettings::default().seed)]
    cv_seed: u64,
}

impl CritvalArgs {
    fn cache_path(&self) -> Option<PathBuf> {
        self.cache.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
    }

    fn open(&self) -> Result<CritvalCache> {
        match self.cache_path() {
            Some(p) => CritvalCache::open(p, self.grid, self.cv_reps, self.cv_seed),
            None => Ok(CritvalCache::new(self.grid, self.cv_reps, self.cv_seed)),
        }
    }
}

#[derive(Debug, clap::Args)]
struct KdeArgs {
    /// Bandwidth rule for the kernel scores.
    #[arg(long, value_enum, default_value = "normal-reference")]
    bandwidth: BandwidthChoice,
    /// Density floor in the score denominator.
    #[arg(long, default_value_t = 0.0)]
    floor: f64,
    /// Skip the cross-moment standardization of the scores.
    #[arg(long)]
    raw_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BandwidthChoice {
    NormalReference,
    Silverman,
}

impl KdeArgs {
    fn options(&self) -> TestOptions {
        use crate::kde::BandwidthRule;
        use crate::pipeline::ScoreScaling;
        TestOptions {
            bandwidth: match self.bandwidth {
                BandwidthChoice::NormalReference => BandwidthRule::NormalReference,
                BandwidthChoice::Silverman => BandwidthRule::Silverman,
            },
            floor: self.floor,
            scaling: if self.raw_scores { ScoreScaling::Raw } else { ScoreScaling::Standardized },
        }
    }
}

#[derive(Debug, clap::Args)]
struct TestArgs {
    /// Panel CSV with header y1,...,yp and one row per period.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "test", value_parser = parse_kind)]
    kind: TestKind,
    /// Deterministic case; must agree with the test when given.
    #[arg(long, value_parser = parse_trend)]
    trend: Option<TrendCase>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "cache")]
    critvals: CritvalChoice,
    #[command(flatten)]
    kde: KdeArgs,
    #[command(flatten)]
    cv: CritvalArgs,
}

#[derive(Debug, clap::Args)]
struct CritvalsArgs {
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, value_parser = parse_trend)]
    trend: TrendCase,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Σ as a JSON array of rows or a headerless CSV; identity when absent.
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// J in the same format; Σ⁻¹ when absent.
    #[arg(long)]
    j: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cache")]
    critvals: CritvalChoice,
    #[command(flatten)]
    cv: CritvalArgs,
}

#[derive(Debug, clap::Args)]
struct PowerArgs {
    /// Study configuration (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dist: Option<Dist>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Local parameters, comma separated.
    #[arg(long = "c-grid", value_delimiter = ',', allow_hyphen_values = true)]
    c_grid: Option<Vec<f64>>,
    /// Tests, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    tests: Option<Vec<TestKind>>,
    /// T = 2500 and 20,000 replications.
    #[arg(long)]
    paper_scale: bool,
    /// Critical values from exact per-replication simulation (slow).
    #[arg(long, value_enum)]
    critvals: Option<CritvalChoice>,
    /// Critical-value cache file (defaults to $COINT_CACHE).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EnvelopeArgs {
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, value_parser = parse_trend)]
    trend: TrendCase,
    /// Innovation law; sets Σ = I and J to its Fisher information.
    #[arg(long, value_enum, default_value = "gaussian")]
    dist: Dist,
    /// Explicit Σ (JSON rows or headerless CSV); overrides --dist.
    #[arg(long, requires = "j")]
    sigma: Option<PathBuf>,
    /// Explicit J; overrides --dist.
    #[arg(long, requires = "sigma")]
    j: Option<PathBuf>,
    #[arg(long = "c-grid", value_delimiter = ',', allow_hyphen_values = true, default_value = "0,-5,-10,-15,-20")]
    c_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Also simulate the trace tests of the trend case.
    #[arg(long)]
    with_tests: bool,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct LabfArgs {
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Sample sizes, comma separated.
    #[arg(long = "T-list", value_delimiter = ',', default_value = "100,400,1600")]
    t_list: Vec<usize>,
    /// Local parameter along the design direction.
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    c: f64,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Limit grid as a multiple of the sample sizes' common multiple.
    #[arg(long, default_value_t = 4)]
    oversample: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_kind(s: &str) -> std::result::Result<TestKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_trend(s: &str) -> std::result::Result<TrendCase, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Reads a square matrix from a JSON array of rows or a headerless CSV.
pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path)?;
    if let Ok(rows) = serde_json::from_str::<Vec<Vec<f64>>>(&text) {
        return from_rows(&rows);
    }
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let row = rec?
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::config(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    from_rows(&rows)
}

fn write_to(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path)?);
            f(&mut file)?;
            file.flush()?;
        }
        None => {
            let mut stdout = io::stdout().lock();
            f(&mut stdout)?;
        }
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    write_to(None, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    let p = args.p;
    let vec = |v: Option<Vec<f64>>| -> Result<Vector> {
        match v {
            None => Ok(Vector::zeros(p)),
            Some(v) if v.len() == p => Ok(Vector::from_vec(v)),
            Some(_) => Err(Error::Dimension("mu and tau must have length p".into())),
        }
    };
    let config = EcmConfig {
        p,
        t: args.t,
        c: local_direction(p) * args.c,
        mu: vec(args.mu)?,
        tau: vec(args.tau)?,
        seed: args.seed,
    };
    let panel = generate_panel(&config, &args.dist.spec(p))?;
    write_to(args.out.as_deref(), |w| panel.write_csv(w))?;
    Ok(0)
}

fn test(args: TestArgs) -> Result<i32> {
    if let Some(trend) = args.trend {
        if trend != args.kind.trend() {
            return Err(Error::Config(format!(
                "{} is the test for trend case {}, not {trend}",
                args.kind,
                args.kind.trend()
            )));
        }
    }
    let panel = Panel::read_csv(fs::File::open(&args.data)?)?;
    let cache = args.cv.open()?;
    let source = CritvalSource::Table { cache: &cache, mode: args.critvals.mode() };
    let result = run_test(&panel, args.kind, args.alpha, &args.kde.options(), source)?;
    cache.save()?;
    print_json(&result)?;
    Ok(if result.reject { 1 } else { 0 })
}

#[derive(serde::Serialize)]
struct CritvalsOutput {
    trend: TrendCase,
    alpha: f64,
    values: Vec<CritvalEntry>,
}

#[derive(serde::Serialize)]
struct CritvalEntry {
    test: TestKind,
    critval: crate::limit::Critval,
}

fn critvals(args: CritvalsArgs) -> Result<i32> {
    let sigma = match &args.sigma {
        Some(path) => read_matrix(path)?,
        None => Mat::identity(args.p, args.p),
    };
    if sigma.nrows() != args.p {
        return Err(Error::Dimension(format!("sigma is {}x{}, expected p = {}", sigma.nrows(), sigma.ncols(), args.p)));
    }
    let j = match &args.j {
        Some(path) => read_matrix(path)?,
        None => crate::linalg::spd_inverse(&sigma)?,
    };
    let cache = args.cv.open()?;
    let values = [Flavor::Gaussian, Flavor::Semiparametric]
        .into_iter()
        .map(|flavor| {
            let kind = TestKind::new(args.trend, flavor);
            let critval = cache.lookup(kind, &sigma, &j, args.alpha, args.critvals.mode())?;
            Ok(CritvalEntry { test: kind, critval })
        })
        .collect::<Result<Vec<_>>>()?;
    cache.save()?;
    print_json(&CritvalsOutput { trend: args.trend, alpha: args.alpha, values })?;
    Ok(0)
}

fn study_config(args: &PowerArgs) -> Result<StudyConfig> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => StudyConfig::desk(
            args.dist.unwrap_or(Dist::Gaussian).spec(2),
            250,
            vec![0.0, -5.0, -10.0, -15.0, -20.0],
            TestKind::ALL.to_vec(),
        ),
    };
    if args.paper_scale {
        config.t = FULL_SCALE_T;
        config.reps = FULL_SCALE_REPS;
    }
    if let Some(dist) = args.dist {
        config.innovations = dist.spec(config.p());
    }
    if let Some(t) = args.t {
        config.t = t;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(grid) = &args.c_grid {
        config.c_grid = grid.clone();
    }
    if let Some(tests) = &args.tests {
        config.tests = tests.clone();
    }
    if let Some(cv) = args.critvals {
        config.critvals.mode = cv.mode();
    }
    if let Some(path) = args.cache.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from)) {
        config.critvals.cache = Some(path);
    }
    config.validate()?;
    Ok(config)
}

fn power(args: PowerArgs) -> Result<i32> {
    let config = study_config(&args)?;
    let out = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run_study(&config))?,
        None => run_study(&config)?,
    };
    write_outputs(&args.out, &config, &out)?;
    for e in &out.excluded {
        eprintln!("excluded: c = {}, rep {}: {}", e.c, e.rep, e.error);
    }
    Ok(0)
}

fn envelope(args: EnvelopeArgs) -> Result<i32> {
    let spec = match (&args.sigma, &args.j) {
        (Some(s), Some(j)) => LimitSpec::new(read_matrix(s)?, read_matrix(j)?, args.grid, args.reps, args.seed)?,
        _ => {
            let innov = args.dist.spec(args.p);
            let j = innov.fisher_information()?;
            LimitSpec::new(innov.sigma, j, args.grid, args.reps, args.seed)?
        }
    };
    let kinds: Vec<TestKind> = if args.with_tests {
        vec![TestKind::new(args.trend, Flavor::Gaussian), TestKind::new(args.trend, Flavor::Semiparametric)]
    } else {
        Vec::new()
    };
    let direction = local_direction(spec.dim());
    let curve = limit_power(&spec, args.trend, &args.c_grid, args.alpha, &kinds, true, &direction)?;
    write_to(args.out.as_deref(), |w| curve.write_csv(w))?;
    Ok(0)
}

fn diag_labf(args: LabfArgs) -> Result<i32> {
    let sigma = Mat::identity(args.p, args.p);
    let c = local_direction(args.p) * args.c;
    let report = labf_diagnostic(&args.t_list, &sigma, &c, args.reps, args.oversample, args.seed)?;
    print_json(&report)?;
    Ok(0)
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => test(a),
        Command::Critvals(a) => critvals(a),
        Command::Power(a) => power(a),
        Command::Envelope(a) => envelope(a),
        Command::DiagLabf(a) => diag_labf(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
