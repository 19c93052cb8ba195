//! `wildiv`: wild cluster bootstrap inference for linear IV models.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use wildiv::ar;
use wildiv::confidence::{self, Grid, SignReuse, TestSpec};
use wildiv::inference::{self, SignPolicy, DEFAULT_DRAWS};
use wildiv::io::{self, ColumnMap, ConfigFile, Format, LoadOptions};
use wildiv::kclass::{KClassFit, Method, DEFAULT_FULLER_C};
use wildiv::robust::{self, RobustStatistic};
use wildiv::sim::{self, DgpConfig, ExperimentSpec, SimTest};
use wildiv::wald::{self, WaldBootstrap, WaldOptions};
use wildiv::{ClusteredDataset, Error, Hypothesis, PartialledDesign};

#[derive(Parser, Debug)]
#[command(name = "wildiv", version, about = "Wild cluster bootstrap tests for IV regressions with few clusters")]
struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores [default: 0].
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file (stdout when absent).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Point estimates and per-cluster first stages.
    Fit(FitArgs),
    /// One bootstrap (or asymptotic) test.
    Test(TestArgs),
    /// Confidence set by test inversion over a grid.
    Cs(CsArgs),
    /// Monte Carlo size or power study on the built-in design.
    Simulate(SimArgs),
    /// Cluster-level cross moments of the partialled instruments with W.
    Diagnose(DataArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    y: Option<String>,
    /// Comma-separated endogenous columns [default: x1, x2, ...].
    #[arg(long)]
    x: Option<String>,
    /// Comma-separated instrument columns [default: z1, z2, ...].
    #[arg(long)]
    z: Option<String>,
    /// Comma-separated exogenous columns [default: w1, w2, ...; intercept if none].
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    cluster: Option<String>,
    /// Add cluster indicators to W.
    #[arg(long)]
    cluster_dummies: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// tsls, liml, full or ba [default: tsls].
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    fuller_c: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TestName {
    Wald,
    WaldCr,
    Ar,
    ArCr,
    AsyArCr,
    Lm,
    Cqlr,
    ScoreWald,
}

impl FromStr for TestName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SignsArg {
    Auto,
    Exhaustive,
    Sampled,
}

impl FromStr for SignsArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Args, Debug)]
struct BootArgs {
    /// tsls, liml, full or ba, for Wald tests [default: tsls].
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    fuller_c: Option<f64>,
    /// Significance level [default: 0.1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Sign-set policy [default: auto, exhaustive for q ≤ 12].
    #[arg(long)]
    signs: Option<SignsArg>,
    /// Sampled sign vectors [default: 499].
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(value_enum)]
    test: TestName,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    boot: BootArgs,
    /// Null value(s), comma-separated [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    beta0: Option<String>,
    /// json or csv [default: json].
    #[arg(long)]
    format: Option<Format>,
    /// Include the bootstrap statistics in JSON output.
    #[arg(long)]
    distribution: bool,
}

#[derive(Args, Debug)]
struct CsArgs {
    #[arg(value_enum)]
    test: TestName,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    boot: BootArgs,
    /// Grid start [default: -10].
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Grid end [default: 10].
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    /// Grid step [default: 0.01].
    #[arg(long)]
    step: Option<f64>,
    /// Use one sign set for every grid point instead of fresh draws.
    #[arg(long)]
    shared_signs: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Size,
    Power,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// 10 or 14 clusters [default: 10].
    #[arg(long)]
    q: Option<usize>,
    /// Number of instruments [default: 1].
    #[arg(long)]
    dz: Option<usize>,
    /// Comma-separated first-stage strengths [default: 2,4,6].
    #[arg(long)]
    pi0: Option<String>,
    /// Comma-separated endogeneity levels [default: 0,0.5,0.9].
    #[arg(long)]
    rho: Option<String>,
    /// Comma-separated strong-cluster counts from {1,3,6} [default: 1].
    #[arg(long)]
    strong: Option<String>,
    /// Comma-separated tests such as WB-S:full [default: menu for d_z].
    #[arg(long)]
    tests: Option<String>,
    /// Monte Carlo replications [default: 2000].
    #[arg(long)]
    reps: Option<usize>,
    /// Bootstrap sign draws when q > 12 [default: 499].
    #[arg(long)]
    boot: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated true betas for power [default: 41 points over ±6/pi0].
    #[arg(long, allow_hyphen_values = true)]
    betas: Option<String>,
    /// Default power grid size [default: 41].
    #[arg(long)]
    beta_points: Option<usize>,
    /// csv or json [default: csv].
    #[arg(long)]
    format: Option<Format>,
}

/// Usage errors exit 1, numerical failures exit 2.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Res<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Config-file values, consulted only when the flag is absent.
struct Settings {
    file: ConfigFile,
}

impl Settings {
    fn load(path: Option<&PathBuf>, allowed: &[&str]) -> Res<Self> {
        let file = match path {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        file.check_keys(allowed)?;
        Ok(Self { file })
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Res<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => Ok(self.file.parsed(key)?),
        }
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Res<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn flag(&self, flag: bool, key: &str) -> Res<bool> {
        Ok(flag || self.file.parsed::<bool>(key)?.unwrap_or(false))
    }
}

const COMMON_KEYS: &[&str] = &["seed", "workers", "out"];
const DATA_KEYS: &[&str] = &["data", "y", "x", "z", "w", "cluster", "cluster-dummies"];
const BOOT_KEYS: &[&str] = &["method", "fuller-c", "alpha", "signs", "draws"];

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_owned()).filter(|t| !t.is_empty()).collect()
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Res<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    split_list(s)
        .iter()
        .map(|t| t.parse::<T>().map_err(|e| usage(format!("{what}: \"{t}\": {e}"))))
        .collect()
}

fn load_data(a: &DataArgs, s: &Settings) -> Res<io::LoadedData> {
    let path: PathBuf = s.pick(a.data.clone(), "data")?.ok_or_else(|| usage("--data is required"))?;
    let list = |flag: &Option<String>, key: &str| -> Res<Vec<String>> {
        Ok(s.pick(flag.clone(), key)?.map(|v| split_list(&v)).unwrap_or_default())
    };
    let map = ColumnMap {
        y: s.or(a.y.clone(), "y", "y".into())?,
        x: list(&a.x, "x")?,
        z: list(&a.z, "z")?,
        w: list(&a.w, "w")?,
        cluster: s.or(a.cluster.clone(), "cluster", "cluster".into())?,
    };
    let opts = LoadOptions {
        cluster_dummies: s.flag(a.cluster_dummies, "cluster-dummies")?,
    };
    Ok(io::load_csv(&path, &map, opts)?)
}

fn write_output(out: Option<&PathBuf>, f: impl FnOnce(&mut dyn Write) -> wildiv::Result<()>) -> Res<()> {
    match out {
        Some(p) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(p).map_err(Error::from)?);
            f(&mut file)?;
            file.flush().map_err(Error::from)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)?;
        }
    }
    Ok(())
}

struct BootSettings {
    method: Method,
    fuller_c: f64,
    alpha: f64,
    policy: SignPolicy,
}

fn boot_settings(b: &BootArgs, s: &Settings, seed: u64) -> Res<BootSettings> {
    let draws = s.or(b.draws, "draws", DEFAULT_DRAWS)?;
    let policy = match s.or(b.signs, "signs", SignsArg::Auto)? {
        SignsArg::Auto => SignPolicy::Auto { draws, seed },
        SignsArg::Exhaustive => SignPolicy::Exhaustive,
        SignsArg::Sampled => SignPolicy::Sampled { draws, seed },
    };
    Ok(BootSettings {
        method: s.or(b.method, "method", Method::Tsls)?,
        fuller_c: s.or(b.fuller_c, "fuller-c", DEFAULT_FULLER_C)?,
        alpha: s.or(b.alpha, "alpha", 0.1)?,
        policy,
    })
}

fn hypothesis_values(text: Option<String>, data: &ClusteredDataset) -> Res<DVector<f64>> {
    let values = match text {
        Some(t) => parse_list::<f64>(&t, "beta0")?,
        None => vec![0.0; data.dx()],
    };
    if values.len() != data.dx() {
        return Err(usage(format!(
            "beta0 needs {} value(s), got {}",
            data.dx(),
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn run_fit(cli: &Cli, a: &FitArgs) -> Res<()> {
    let s = Settings::load(cli.config.as_ref(), &keys(&[COMMON_KEYS, DATA_KEYS, &["method", "fuller-c"]]))?;
    let loaded = load_data(&a.data, &s)?;
    let method = s.or(a.method, "method", Method::Tsls)?;
    let c = s.or(a.fuller_c, "fuller-c", DEFAULT_FULLER_C)?;
    let d = &loaded.dataset;
    let design = PartialledDesign::new(d)?;
    let fit = KClassFit::estimate(d, &design, method, c)?;
    let report = io::FitReport::new(d, &loaded.cluster_labels, &fit);
    let out: Option<PathBuf> = s.pick(cli.out.clone(), "out")?;
    write_output(out.as_ref(), |w| io::write_json(&report, w))
}

fn run_test(cli: &Cli, a: &TestArgs, seed: u64) -> Res<()> {
    let s = Settings::load(
        cli.config.as_ref(),
        &keys(&[COMMON_KEYS, DATA_KEYS, BOOT_KEYS, &["beta0", "format", "distribution"]]),
    )?;
    let loaded = load_data(&a.data, &s)?;
    let d = &loaded.dataset;
    let b = boot_settings(&a.boot, &s, seed)?;
    let beta_0 = hypothesis_values(s.pick(a.beta0.clone(), "beta0")?, d)?;
    let format = s.or(a.format, "format", Format::Json)?;
    let with_dist = s.flag(a.distribution, "distribution")?;
    let out: Option<PathBuf> = s.pick(cli.out.clone(), "out")?;

    if a.test == TestName::AsyArCr {
        let r = ar::asymptotic_ar_cr_test(d, &beta_0, b.alpha)?;
        return write_output(out.as_ref(), |w| io::write_json(&r, w));
    }
    let signs = inference::make_sign_set(d.q(), b.policy)?;
    let result = match a.test {
        TestName::Wald | TestName::WaldCr => {
            let mut o = WaldOptions::new(b.method, a.test == TestName::WaldCr);
            o.fuller_c = b.fuller_c;
            let hyp = if d.dx() == 1 {
                Hypothesis::scalar(beta_0[0])
            } else {
                Hypothesis::full_vector(beta_0.clone())
            };
            WaldBootstrap::new(d, o)?.test(&hyp, &signs, b.alpha)?
        }
        TestName::Ar | TestName::ArCr => {
            ar::ar_bootstrap_test(d, &beta_0, a.test == TestName::ArCr, &signs, b.alpha, None)?
        }
        TestName::Lm => robust::lm_cqlr_bootstrap_test(d, &beta_0, RobustStatistic::Lm, &signs, b.alpha)?,
        TestName::Cqlr => robust::lm_cqlr_bootstrap_test(d, &beta_0, RobustStatistic::Cqlr, &signs, b.alpha)?,
        TestName::ScoreWald => wald::score_bootstrap_wald_test(d, beta_0[0], &signs, b.alpha)?,
        TestName::AsyArCr => unreachable!(),
    };
    write_output(out.as_ref(), |w| io::write_results(&result, format, with_dist, w))
}

fn run_cs(cli: &Cli, a: &CsArgs, seed: u64) -> Res<()> {
    let s = Settings::load(
        cli.config.as_ref(),
        &keys(&[COMMON_KEYS, DATA_KEYS, BOOT_KEYS, &["lo", "hi", "step", "shared-signs"]]),
    )?;
    let loaded = load_data(&a.data, &s)?;
    let b = boot_settings(&a.boot, &s, seed)?;
    let def = Grid::default();
    let grid = Grid {
        lo: s.or(a.lo, "lo", def.lo)?,
        hi: s.or(a.hi, "hi", def.hi)?,
        step: s.or(a.step, "step", def.step)?,
    };
    let spec = match a.test {
        TestName::Wald | TestName::WaldCr => {
            let mut o = WaldOptions::new(b.method, a.test == TestName::WaldCr);
            o.fuller_c = b.fuller_c;
            TestSpec::Wald(o)
        }
        TestName::Ar => TestSpec::Ar { studentize: false },
        TestName::ArCr => TestSpec::Ar { studentize: true },
        TestName::Lm => TestSpec::Lm,
        TestName::Cqlr => TestSpec::Cqlr,
        TestName::ScoreWald => TestSpec::ScoreWald,
        TestName::AsyArCr => return Err(usage("cs supports bootstrap tests only")),
    };
    let reuse = if s.flag(a.shared_signs, "shared-signs")? {
        SignReuse::Shared
    } else {
        SignReuse::Fresh
    };
    let cs = confidence::invert_confidence_set(&loaded.dataset, &spec, grid, b.alpha, b.policy, reuse)?;
    let out: Option<PathBuf> = s.pick(cli.out.clone(), "out")?;
    write_output(out.as_ref(), |w| io::write_json(&cs, w))
}

fn run_simulate(cli: &Cli, a: &SimArgs, seed: u64) -> Res<()> {
    let s = Settings::load(
        cli.config.as_ref(),
        &keys(&[
            COMMON_KEYS,
            &["q", "dz", "pi0", "rho", "strong", "tests", "reps", "boot", "alpha", "betas", "beta-points", "format"],
        ]),
    )?;
    let q = s.or(a.q, "q", 10)?;
    let dz = s.or(a.dz, "dz", 1)?;
    let pi0s: Vec<f64> = parse_list(&s.or(a.pi0.clone(), "pi0", "2,4,6".into())?, "pi0")?;
    let rhos: Vec<f64> = parse_list(&s.or(a.rho.clone(), "rho", "0,0.5,0.9".into())?, "rho")?;
    let strongs: Vec<usize> = parse_list(&s.or(a.strong.clone(), "strong", "1".into())?, "strong")?;
    let tests = match s.pick(a.tests.clone(), "tests")? {
        Some(t) => split_list(&t).iter().map(|x| SimTest::parse(x)).collect::<wildiv::Result<Vec<_>>>()?,
        None => SimTest::default_menu(dz),
    };
    let mut spec = ExperimentSpec::new(tests, s.or(a.reps, "reps", 2000)?, seed);
    spec.boot_reps = s.or(a.boot, "boot", DEFAULT_DRAWS)?;
    spec.alpha = s.or(a.alpha, "alpha", 0.1)?;
    let format = s.or(a.format, "format", Format::Csv)?;

    let mut cells = Vec::new();
    for &strong in &strongs {
        for &pi0 in &pi0s {
            for &rho in &rhos {
                let c = DgpConfig {
                    q,
                    dz,
                    pi0,
                    rho,
                    strong_clusters: strong,
                    ..Default::default()
                };
                c.validate()?;
                cells.push(c);
            }
        }
    }
    let table = match a.experiment {
        Experiment::Size => sim::run_size_experiment(&cells, &spec)?,
        Experiment::Power => {
            let explicit = s.pick(a.betas.clone(), "betas")?;
            let points = s.or(a.beta_points, "beta-points", 41)?;
            let mut rows = Vec::new();
            let mut head = None;
            // The default grid scales with each cell's pi0.
            for c in &cells {
                let grid = match &explicit {
                    Some(t) => parse_list::<f64>(t, "betas")?,
                    None => sim::default_beta_grid(c.pi0, points),
                };
                let t = sim::run_power_experiment(std::slice::from_ref(c), &grid, &spec)?;
                rows.extend(t.rows.iter().cloned());
                head.get_or_insert(t);
            }
            let mut t = head.ok_or_else(|| usage("no simulation cells"))?;
            t.rows = rows;
            t
        }
    };
    let out: Option<PathBuf> = s.pick(cli.out.clone(), "out")?;
    write_output(out.as_ref(), |w| match format {
        Format::Csv => io::write_rejection_csv(&table, w),
        Format::Json => io::write_json(&table, w),
    })
}

fn run_diagnose(cli: &Cli, a: &DataArgs) -> Res<()> {
    let s = Settings::load(cli.config.as_ref(), &keys(&[COMMON_KEYS, DATA_KEYS]))?;
    let loaded = load_data(a, &s)?;
    let design = PartialledDesign::new(&loaded.dataset)?;
    let diag = wildiv::data::assumption_diagnostics(&loaded.dataset, &design);
    let out: Option<PathBuf> = s.pick(cli.out.clone(), "out")?;
    write_output(out.as_ref(), |w| io::write_json(&diag, w))
}

fn run(cli: &Cli) -> Res<()> {
    // Seed and workers may come from the config file too.
    let top = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = match cli.seed {
        Some(v) => v,
        None => top.parsed::<u64>("seed")?.unwrap_or(0),
    };
    let workers = match cli.workers {
        Some(v) => v,
        None => top.parsed::<usize>("workers")?.unwrap_or(0),
    };
    sim::with_workers(workers, || match &cli.command {
        Command::Fit(a) => run_fit(cli, a),
        Command::Test(a) => run_test(cli, a, seed),
        Command::Cs(a) => run_cs(cli, a, seed),
        Command::Simulate(a) => run_simulate(cli, a, seed),
        Command::Diagnose(a) => run_diagnose(cli, a),
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
