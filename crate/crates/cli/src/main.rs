use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use mrts::covlab::{BisquareBasis, ConventionalTpsBasis, IseProblem, QuadratureGrid, QuadratureRule, ReferenceCovariance};
use mrts::estimation::{select_k_with, FitOptions, ModelDocument, RankPolicy};
use mrts::experiments::{simulate_panel, run_reproduction, Experiment, ReproConfig, Sampling, SimulationSpec, Truth};
use mrts::locations::{fmt_f64, read_matrix_csv};
use mrts::prediction::{regular_grid, write_predictions_csv, KrigingOperator};
use mrts::{DataPanel, Error, LocationSet, MrtsBasis, SpatialBasis, SreFit, TpsSystem};

const THREADS_ENV: &str = "MRTS_THREADS";

#[derive(Parser)]
#[command(name = "mrts", version, about = "Multi-resolution thin-plate-spline bases and fixed rank kriging")]
struct Cli {
    /// Worker threads (default: $MRTS_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write a JSON run manifest to this path
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the ordered basis on a set of control points
    Basis(BasisArgs),
    /// Fit the random-effects model, optionally selecting K by AIC
    Fit(FitArgs),
    /// Krige a panel with a fitted model
    Predict(PredictArgs),
    /// Optimal integrated squared error of basis families against a reference covariance
    Ise(IseArgs),
    /// Draw a seeded panel
    Simulate(SimulateArgs),
    /// Run a named experiment
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct BasisArgs {
    /// Control points CSV, one site per row
    #[arg(long)]
    locations: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    Truncate,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    locations: PathBuf,
    /// Long-format panel CSV with columns site_id,t,value
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    sigma_eps2: f64,
    /// Fit a single K
    #[arg(long, conflicts_with_all = ["k_min", "k_max"], required_unless_present = "k_max")]
    k: Option<usize>,
    #[arg(long, requires = "k_max")]
    k_min: Option<usize>,
    /// Select K in [k-min, k-max] by AIC (k-min defaults to d+1)
    #[arg(long)]
    k_max: Option<usize>,
    /// Reuse a basis written by `mrts basis` instead of computing one
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Mean surface at the sites to subtract: one column, or one per replicate
    #[arg(long)]
    mean: Option<PathBuf>,
    /// Strict rejects rank-deficient designs; truncate drops the null directions
    #[arg(long, value_enum, default_value = "strict")]
    rank_policy: PolicyArg,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model written by `mrts fit`
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    panel: PathBuf,
    /// Prediction sites CSV
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    sites: Option<PathBuf>,
    /// Regular lattice with this many points per axis
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    grid_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    grid_hi: f64,
    #[arg(long)]
    mean: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// Example-1 centers with a common radius (values are radii)
    Radius,
    /// Seven shifted centers (values are shifts)
    Shift,
    /// A named bisquare preset
    Preset,
    /// Leading K functions of the ordered basis on --locations (values are K)
    Mrts,
    /// Natural thin-plate lattice functions (values are lattice sizes L)
    Conventional,
}

#[derive(Args)]
struct IseArgs {
    /// example1, deformed or exp2d
    #[arg(long)]
    target: String,
    #[arg(long, value_enum)]
    family: Family,
    /// Comma-separated parameter values
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    values: Vec<f64>,
    #[arg(long, allow_negative_numbers = true, requires_all = ["to", "steps"], conflicts_with = "values")]
    from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    to: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, required_if_eq("family", "preset"))]
    preset: Option<String>,
    #[arg(long, required_if_eq("family", "mrts"))]
    locations: Option<PathBuf>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, value_parser = ["trapezoid", "midpoint", "uniform"])]
    grid_rule: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TruthArg {
    TwoCosine,
    Exponential,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long = "t", default_value_t = 50)]
    replicates: usize,
    #[arg(long, default_value_t = 3.0)]
    sigma_eps2: f64,
    #[arg(long, value_enum, default_value = "two-cosine")]
    truth: TruthArg,
    #[arg(long, default_value_t = 1.0)]
    sill: f64,
    #[arg(long, default_value_t = 0.3)]
    range: f64,
    /// Sample sites on a regular lattice instead of uniformly
    #[arg(long)]
    fixed_grid: bool,
    #[arg(long)]
    locations_out: PathBuf,
    #[arg(long)]
    panel_out: PathBuf,
    /// Noiseless field on the evaluation lattice, long format
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 41)]
    eval_grid: usize,
}

#[derive(Args)]
struct ReproduceArgs {
    /// fig2a, fig2b, table1, table3 or multires_demo
    name: String,
    /// TOML config; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Run the full 200 replicates for table3
    #[arg(long, conflicts_with = "replicates")]
    full: bool,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, value_parser = ["trapezoid", "midpoint", "uniform"])]
    grid_rule: Option<String>,
    /// Directory for <name>.csv and <name>_summary.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    args: Vec<String>,
    threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<ReproConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_sha256: Option<String>,
    outputs: Vec<OutputEntry>,
    elapsed_seconds: f64,
}

/// Collects outputs; every file is written to a temporary sibling and renamed into place.
#[derive(Default)]
struct Outputs {
    written: Vec<OutputEntry>,
    stdout: Vec<u8>,
}

impl Outputs {
    fn emit(&mut self, path: Option<&Path>, bytes: Vec<u8>) -> Result<(), Failure> {
        match path {
            Some(p) => {
                write_atomic(p, &bytes)?;
                self.written.push(OutputEntry { path: p.display().to_string(), sha256: hex(&Sha256::digest(&bytes)) });
            }
            None => self.stdout.extend(bytes),
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> mrts::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(v).map_err(Error::from)?;
    s.push(b'\n');
    Ok(s)
}

fn read_panel(locs: LocationSet, path: &Path, mean: Option<&PathBuf>) -> Result<DataPanel, Failure> {
    let panel = DataPanel::read_csv(locs, path)?;
    Ok(match mean {
        Some(m) => panel.subtract_mean(&read_matrix_csv(File::open(m)?)?)?,
        None => panel,
    })
}

fn run_basis(a: &BasisArgs, out: &mut Outputs) -> Result<(), Failure> {
    let system = TpsSystem::build(LocationSet::read_csv(&a.locations)?)?;
    let basis = MrtsBasis::compute(&system, a.k)?;
    out.emit(a.out.as_deref(), json_bytes(&basis.to_record())?)
}

fn run_fit(a: &FitArgs, out: &mut Outputs) -> Result<(), Failure> {
    let locs = LocationSet::read_csv(&a.locations)?;
    let d = locs.dim();
    let panel = read_panel(locs, &a.panel, a.mean.as_ref())?;
    let (k_min, k_max) = match (a.k, a.k_min, a.k_max) {
        (Some(k), _, _) => (k, k),
        (None, lo, Some(hi)) => (lo.unwrap_or(d + 1), hi),
        _ => return Err(Failure::Usage("either --k or --k-max is required".into())),
    };
    let basis = match &a.basis {
        Some(p) => {
            let b = MrtsBasis::read_json(p)?;
            if b.locations() != panel.locations() {
                return Err(Failure::Data(Error::Shape("basis control points differ from --locations".into())));
            }
            b
        }
        None => MrtsBasis::compute(&TpsSystem::build(panel.locations().clone())?, k_max)?,
    };
    let opts = FitOptions {
        rank_policy: match a.rank_policy {
            PolicyArg::Strict => RankPolicy::Strict,
            PolicyArg::Truncate => RankPolicy::Truncate,
        },
        ..FitOptions::default()
    };
    let sel = select_k_with(&panel, &basis, k_min, k_max, a.sigma_eps2, &opts)?;
    out.emit(a.out.as_deref(), json_bytes(&sel.best.to_document(sel.trace))?)
}

fn run_predict(a: &PredictArgs, out: &mut Outputs) -> Result<(), Failure> {
    let doc: ModelDocument = serde_json::from_reader(File::open(&a.fit)?).map_err(Error::from)?;
    let fit = SreFit::<MrtsBasis>::from_document(&doc)?;
    let panel = read_panel(fit.locations().clone(), &a.panel, a.mean.as_ref())?;
    let sites = match (&a.sites, a.grid) {
        (Some(p), _) => read_matrix_csv(File::open(p)?)?,
        (None, Some(m)) => regular_grid(fit.locations().dim(), m, a.grid_lo, a.grid_hi)?,
        _ => return Err(Failure::Usage("either --sites or --grid is required".into())),
    };
    let yhat = KrigingOperator::new(&fit).krige(panel.values(), &sites)?;
    out.emit(a.out.as_deref(), to_bytes(|b| write_predictions_csv(b, &sites, &yhat))?)
}

fn run_ise(a: &IseArgs, out: &mut Outputs) -> Result<(), Failure> {
    let target = ReferenceCovariance::by_name(&a.target)?;
    let values: Vec<f64> = match (a.from, a.to, a.steps) {
        (Some(lo), Some(hi), Some(n)) if n >= 2 => {
            let m = (n - 1) as f64;
            (0..n).map(|i| (lo * (m - i as f64) + hi * i as f64) / m).collect()
        }
        (Some(_), _, _) => return Err(Failure::Usage("--steps must be at least 2".into())),
        _ => a.values.clone(),
    };
    let preset = match a.family {
        Family::Preset => Some(BisquareBasis::by_name(a.preset.as_deref().unwrap_or_default())?),
        _ => None,
    };
    let d = match a.family {
        Family::Radius | Family::Shift => 1,
        Family::Conventional => 2,
        Family::Preset => preset.as_ref().map_or(1, |b| b.dim()),
        Family::Mrts => target.dim().unwrap_or(2),
    };
    let rule = match &a.grid_rule {
        Some(r) => QuadratureRule::by_name(r)?,
        None => QuadratureRule::Trapezoid,
    };
    let grid = match a.grid_points {
        Some(m) => QuadratureGrid::tensor(d, m, rule)?,
        None => QuadratureGrid::tensor(d, if d == 1 { 201 } else { 41 }, rule)?,
    };
    let problem = IseProblem::new(&target, grid)?;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    let best = |f: DMatrix<f64>| -> Result<f64, Failure> { Ok(problem.best(&f)?.1) };
    match a.family {
        Family::Radius | Family::Shift | Family::Conventional if values.is_empty() => {
            return Err(Failure::Usage("give --values or --from/--to/--steps".into()))
        }
        Family::Radius => {
            for &r in &values {
                rows.push((r, best(problem.tabulate(&BisquareBasis::radius_family(r))?)?));
            }
        }
        Family::Shift => {
            for &v in &values {
                rows.push((v, best(problem.tabulate(&BisquareBasis::shift_family(v))?)?));
            }
        }
        Family::Preset => {
            let b = preset.as_ref().expect("preset family");
            rows.push((f64::NAN, best(problem.tabulate(b)?)?));
        }
        Family::Conventional => {
            for &l in &values {
                let b = ConventionalTpsBasis::new(as_count(l)?)?;
                rows.push((b.nominal_count() as f64, best(problem.tabulate(&b)?)?));
            }
        }
        Family::Mrts => {
            let path = a.locations.as_ref().ok_or_else(|| Failure::Usage("--locations is required".into()))?;
            let ks = values.iter().map(|&v| as_count(v)).collect::<Result<Vec<_>, _>>()?;
            let k_max = ks.iter().copied().max().ok_or_else(|| Failure::Usage("give --values with K".into()))?;
            let full = MrtsBasis::compute(&TpsSystem::build(LocationSet::read_csv(path)?)?, k_max)?;
            for k in ks {
                rows.push((k as f64, best(problem.tabulate(&full.truncated(k)?)?)?));
            }
        }
    }
    let bytes = to_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["parameter", "ise"])?;
        for (p, e) in &rows {
            let p = if p.is_nan() { a.preset.clone().unwrap_or_default() } else { fmt_f64(*p) };
            w.write_record([p, fmt_f64(*e)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.emit(a.out.as_deref(), bytes)
}

fn as_count(v: f64) -> Result<usize, Failure> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Failure::Usage(format!("expected a whole number, got {v}")))
    }
}

fn run_simulate(a: &SimulateArgs, out: &mut Outputs) -> Result<(), Failure> {
    let spec = SimulationSpec {
        truth: match a.truth {
            TruthArg::TwoCosine => Truth::TwoCosine,
            TruthArg::Exponential => Truth::Exponential { sill: a.sill, range: a.range },
        },
        n: a.n,
        replicates: a.replicates,
        sigma_eps2: a.sigma_eps2,
        sampling: if a.fixed_grid { Sampling::FixedGrid } else { Sampling::UniformRandom },
        seed: a.seed,
        stream: a.stream,
        eval_grid: if a.truth_out.is_some() { a.eval_grid } else { 0 },
    };
    let sim = simulate_panel(&spec)?;
    out.emit(Some(&a.locations_out), to_bytes(|b| sim.panel.locations().write_csv(b))?)?;
    out.emit(Some(&a.panel_out), to_bytes(|b| sim.panel.write_csv(b))?)?;
    if let Some(p) = &a.truth_out {
        let bytes = to_bytes(|b| write_predictions_csv(b, sim.grid.points(), &sim.truth_on_grid))?;
        out.emit(Some(p), bytes)?;
    }
    Ok(())
}

fn run_reproduce(a: &ReproduceArgs, out: &mut Outputs) -> Result<ReproConfig, Failure> {
    let name = Experiment::by_name(&a.name)?;
    let mut config = match &a.config {
        Some(p) => {
            let c = ReproConfig::read_toml(p)?;
            if c.name != name {
                return Err(Failure::Usage(format!("config is for {}, not {}", c.name.name(), name.name())));
            }
            c
        }
        None => ReproConfig::new(name),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.full {
        config.replicates = Some(200);
    } else if a.replicates.is_some() {
        config.replicates = a.replicates;
    }
    if a.grid_points.is_some() {
        config.grid_points = a.grid_points;
    }
    if a.grid_rule.is_some() {
        config.grid_rule = a.grid_rule.clone();
    }
    let rep = run_reproduction(&config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let table = a.out_dir.join(format!("{}.csv", name.name()));
    let summary = a.out_dir.join(format!("{}_summary.csv", name.name()));
    out.emit(Some(&table), to_bytes(|b| rep.table.write_csv(b))?)?;
    out.emit(Some(&summary), to_bytes(|b| rep.write_summary_csv(b))?)?;
    for s in &rep.summary {
        let se = s.std_error.map(|v| format!(" ({v:.4})")).unwrap_or_default();
        out.stdout.extend(format!("{:<16} {:.6}{se}\n", s.label, s.mean).into_bytes());
    }
    Ok(config)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    if let Some(t) = thread_count(cli.threads)? {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let mut out = Outputs::default();
    let mut config = None;
    match &cli.command {
        Command::Basis(a) => run_basis(a, &mut out)?,
        Command::Fit(a) => run_fit(a, &mut out)?,
        Command::Predict(a) => run_predict(a, &mut out)?,
        Command::Ise(a) => run_ise(a, &mut out)?,
        Command::Simulate(a) => run_simulate(a, &mut out)?,
        Command::Reproduce(a) => config = Some(run_reproduce(a, &mut out)?),
    }
    if let Some(path) = &cli.manifest {
        let config_sha256 = match &config {
            Some(c) => Some(hex(&Sha256::digest(serde_json::to_vec(c).map_err(Error::from)?))),
            None => None,
        };
        let manifest = Manifest {
            tool: "mrts",
            version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().skip(1).collect(),
            threads: rayon::current_num_threads(),
            config,
            config_sha256,
            outputs: std::mem::take(&mut out.written),
            elapsed_seconds: started.elapsed().as_secs_f64(),
        };
        write_atomic(path, &json_bytes(&manifest)?)?;
    }
    let stdout = std::io::stdout();
    let mut lock = BufWriter::new(stdout.lock());
    lock.write_all(&out.stdout)?;
    lock.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (code, kind, message) = match run(cli) {
        Ok(()) => return ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => (2, "usage", m),
        Err(Failure::Data(e)) => (1, e.kind(), e.to_string()),
    };
    let record = ErrorRecord { error: kind, message };
    eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| format!("{{\"error\":\"{kind}\"}}")));
    ExitCode::from(code)
}
