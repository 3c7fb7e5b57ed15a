//! Command-line front end: simulate, test, size-study, power-study, bands.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Deserialize;

use crate::data::{load_long_format, negate_components, standardize_outcomes, write_long_format, LongFormatSchema, MvFunctionalDataset};
use crate::eigen::DEFAULT_PVE;
use crate::mean::fit_mean;
use crate::simulation::{
    cell_p_values, generate_dataset, summarize, ScoreDist, SimConfig, Sparsity, StudyCell, StudyRow, STUDY_COLUMNS,
};
use crate::testing::{bootstrap_band, two_sample_pipeline, EffectBand, PipelineConfig, Variance};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

pub const FULL_SCALE_REPLICATIONS: usize = 10_000;

#[derive(Parser, Debug)]
#[command(name = "mvftest", version, about = "Two-sample tests for sparse multivariate functional data")]
pub struct Cli {
    /// Worker threads (default: available cores)
    #[arg(long, global = true, env = "MVFTEST_WORKERS")]
    pub workers: Option<usize>,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a simulated dataset
    Simulate(SimulateArgs),
    /// Test for a group difference on a long-format file
    Test(TestArgs),
    /// Empirical size over a grid of δ = 0 cells
    SizeStudy(StudyArgs),
    /// Empirical power over a δ grid
    PowerStudy(StudyArgs),
    /// Bootstrap simultaneous bands for the group effect
    Bands(BandArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "medium")]
    pub sparsity: Sparsity,
    #[arg(long, default_value = "gaussian")]
    pub dist: ScoreDist,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_e: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Latent scores and curves at the emitted times
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Equal,
    Unequal,
}

impl From<Family> for Variance {
    fn from(f: Family) -> Self {
        match f {
            Family::Equal => Variance::Equal,
            Family::Unequal => Variance::Unequal,
        }
    }
}

impl Family {
    fn as_str(self) -> &'static str {
        match self {
            Family::Equal => "equal",
            Family::Unequal => "unequal",
        }
    }
}

#[derive(Args, Debug)]
pub struct InputArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Study-time bounds `a,b` (default: file header or observed range)
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
    /// Standardize each outcome at this raw time
    #[arg(long, allow_negative_numbers = true)]
    pub standardize_at: Option<f64>,
    /// 1-based outcomes whose sign is flipped
    #[arg(long, value_delimiter = ',')]
    pub negate: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = Family::Equal)]
    pub family: Family,
    #[arg(long, default_value_t = DEFAULT_PVE)]
    pub pve: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Permutation replicates for a permutation p-value
    #[arg(long)]
    pub permutation: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Report file (default: stdout only)
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Eigenfunctions on a 101-point grid
    #[arg(long)]
    pub eigen: Option<PathBuf>,
    /// Every covariance block on a 101-point grid
    #[arg(long)]
    pub covariance: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BandArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// 1-based outcome (default: all)
    #[arg(long)]
    pub component: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct StudyArgs {
    /// TOML file with any of the grid keys below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sparsity: Vec<Sparsity>,
    #[arg(long, value_delimiter = ',')]
    pub dist: Vec<ScoreDist>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Default to 10000 replications per cell
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pve: Option<f64>,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Per-cell p-value files; complete files are reused
    #[arg(long)]
    pub cell_dir: Option<PathBuf>,
}

/// Study grid file; every key is optional and flags take precedence.
#[derive(Deserialize, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub n: Option<Vec<usize>>,
    pub sparsity: Option<Vec<String>>,
    pub dist: Option<Vec<String>>,
    pub delta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub pve: Option<f64>,
    pub family: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub ns: Vec<usize>,
    pub sparsity: Vec<Sparsity>,
    pub dist: Vec<ScoreDist>,
    pub delta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub pve: f64,
    pub family: Family,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Size,
    Power,
}

impl StudyKind {
    fn as_str(self) -> &'static str {
        match self {
            StudyKind::Size => "size-study",
            StudyKind::Power => "power-study",
        }
    }
}

fn parse_domain(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a < b) {
        return Err(format!("empty domain {a},{b}"));
    }
    Ok((a, b))
}

fn pick<T: Clone>(flag: &[T], file: Option<Vec<T>>, default: &[T]) -> Vec<T> {
    if !flag.is_empty() {
        flag.to_vec()
    } else {
        file.unwrap_or_else(|| default.to_vec())
    }
}

fn parse_all<T: std::str::FromStr<Err = Error>>(v: Option<Vec<String>>) -> crate::Result<Option<Vec<T>>> {
    v.map(|v| v.iter().map(|s| s.parse()).collect()).transpose()
}

impl StudyPlan {
    /// Flags over file over the defaults of the study kind.
    pub fn resolve(kind: StudyKind, args: &StudyArgs) -> crate::Result<Self> {
        let file = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str::<StudyFile>(&text)
                    .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))?
            }
            None => StudyFile::default(),
        };
        let (n0, sp0, a0, d0, r0): (&[usize], Sparsity, &[f64], &[f64], usize) = match kind {
            StudyKind::Size => (&[100], Sparsity::Medium, &[0.01, 0.05, 0.10, 0.15], &[0.0], 500),
            StudyKind::Power => (&[200], Sparsity::Low, &[0.1], &[0.0, 0.5, 1.0], 300),
        };
        let family = match (args.family, file.family.as_deref()) {
            (Some(f), _) => f,
            (None, Some(s)) => Family::from_str(s, true).map_err(|e| Error::InvalidArgument(format!("family: {e}")))?,
            (None, None) => Family::Equal,
        };
        let plan = Self {
            ns: pick(&args.n, file.n, n0),
            sparsity: pick(&args.sparsity, parse_all(file.sparsity)?, &[sp0]),
            dist: pick(&args.dist, parse_all(file.dist)?, &[ScoreDist::Gaussian]),
            delta: pick(&args.delta, file.delta, d0),
            alpha: pick(&args.alpha, file.alpha, a0),
            replications: args
                .replications
                .or(file.replications)
                .unwrap_or(if args.full_scale { FULL_SCALE_REPLICATIONS } else { r0 }),
            seed: args.seed.or(file.seed).unwrap_or(1),
            pve: args.pve.or(file.pve).unwrap_or(DEFAULT_PVE),
            family,
        };
        plan.validate(kind)?;
        Ok(plan)
    }

    fn validate(&self, kind: StudyKind) -> crate::Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.ns.is_empty() || self.sparsity.is_empty() || self.dist.is_empty() || self.delta.is_empty() {
            return bad("study grid has an empty axis".into());
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("alpha values must lie in (0, 1)".into());
        }
        if kind == StudyKind::Power && self.alpha.len() != 1 {
            return bad("power study takes a single alpha".into());
        }
        if kind == StudyKind::Size && self.delta.iter().any(|d| *d != 0.0) {
            return bad("size study requires delta = 0".into());
        }
        if self.ns.iter().any(|&n| n < 4) {
            return bad("n must be at least 4".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return bad(format!("pve = {} outside (0, 1]", self.pve));
        }
        if self.delta.iter().any(|d| !d.is_finite()) {
            return bad("delta must be finite".into());
        }
        Ok(())
    }

    /// Cells ordered by (n, sparsity, dist, δ).
    pub fn cells(&self) -> Vec<StudyCell> {
        let mut deltas = self.delta.clone();
        deltas.sort_by(f64::total_cmp);
        let mut sparsity = self.sparsity.clone();
        sparsity.sort();
        let mut dist = self.dist.clone();
        dist.sort();
        let mut ns = self.ns.clone();
        ns.sort();
        let mut out = Vec::new();
        for &n in &ns {
            for &sp in &sparsity {
                for &d in &dist {
                    for &delta in &deltas {
                        let cell = StudyCell {
                            n,
                            sparsity: sp,
                            dist: d,
                            delta,
                        };
                        if !out.contains(&cell) {
                            out.push(cell);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            pve: self.pve,
            variance: self.family.into(),
            ..PipelineConfig::default()
        }
    }

    pub fn header_lines(&self, kind: StudyKind) -> Vec<String> {
        let join = |v: Vec<String>| v.join(",");
        vec![
            format!("mvftest {}", kind.as_str()),
            format!("n: {}", join(self.ns.iter().map(|x| x.to_string()).collect())),
            format!("sparsity: {}", join(self.sparsity.iter().map(|x| x.to_string()).collect())),
            format!("dist: {}", join(self.dist.iter().map(|x| x.to_string()).collect())),
            format!("delta: {}", join(self.delta.iter().map(|x| x.to_string()).collect())),
            format!("alpha: {}", join(self.alpha.iter().map(|x| x.to_string()).collect())),
            format!("replications: {}", self.replications),
            format!("pve: {} family: {} sigma_e: {}", self.pve, self.family.as_str(), SimConfig::default().sigma_e),
            format!("seed: {}", self.seed),
        ]
    }

    fn cell_header(&self, cell: &StudyCell) -> Vec<String> {
        vec![
            format!("cell: {}", cell.tag()),
            format!("replications: {}", self.replications),
            format!("pve: {} family: {}", self.pve, self.family.as_str()),
            format!("seed: {}", self.seed),
        ]
    }
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "NA".to_string(), |p| p.to_string())
}

/// Cached p-values if the file exists, was written for the same cell and
/// settings, and is complete.
fn read_cell_file(path: &Path, header: &[String], replications: usize) -> Option<Vec<Option<f64>>> {
    let file = BufReader::new(File::open(path).ok()?);
    let mut lines = file.lines();
    for h in header {
        if lines.next()?.ok()? != format!("# {h}") {
            return None;
        }
    }
    if lines.next()?.ok()? != "rep,p_value" {
        return None;
    }
    let mut out = Vec::with_capacity(replications);
    for (i, line) in lines.enumerate() {
        let line = line.ok()?;
        let (rep, p) = line.split_once(',')?;
        if rep.parse::<usize>().ok()? != i {
            return None;
        }
        out.push(if p == "NA" { None } else { Some(p.parse().ok()?) });
    }
    (out.len() == replications).then_some(out)
}

fn write_cell_file(path: &Path, header: &[String], p: &[Option<f64>]) -> crate::Result<()> {
    let tmp = path.with_extension("csv.partial");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for h in header {
            writeln!(out, "# {h}")?;
        }
        writeln!(out, "rep,p_value")?;
        for (i, v) in p.iter().enumerate() {
            writeln!(out, "{i},{}", fmt_p(*v))?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Runs every cell of the plan, reusing complete per-cell files.
pub fn run_study_plan(plan: &StudyPlan, cell_dir: Option<&Path>, workers: usize) -> crate::Result<Vec<StudyRow>> {
    if let Some(dir) = cell_dir {
        fs::create_dir_all(dir)?;
    }
    let test = plan.pipeline();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cells = plan.cells();
    let mut rows = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let header = plan.cell_header(cell);
        let path = cell_dir.map(|d| d.join(format!("{}.csv", cell.tag())));
        let cached = path.as_deref().and_then(|p| read_cell_file(p, &header, plan.replications));
        let p = match cached {
            Some(p) => {
                info!("cell {}/{} {}: reused", i + 1, cells.len(), cell.tag());
                p
            }
            None => {
                let p = pool.install(|| cell_p_values(cell, plan.seed, plan.replications, &test));
                if let Some(path) = &path {
                    write_cell_file(path, &header, &p)?;
                }
                let failed = p.iter().filter(|x| x.is_none()).count();
                info!("cell {}/{} {}: done ({failed} failed)", i + 1, cells.len(), cell.tag());
                p
            }
        };
        rows.extend(summarize(cell, &plan.alpha, &p));
    }
    Ok(rows)
}

fn open_output(path: Option<&Path>) -> crate::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_input(args: &InputArgs) -> crate::Result<(MvFunctionalDataset, Vec<String>)> {
    let schema = LongFormatSchema {
        domain: args.domain,
        ..LongFormatSchema::default()
    };
    let mut data = load_long_format(&args.input, &schema)?;
    let mut header = vec![format!("input: {}", args.input.display())];
    if let Some(raw) = args.standardize_at {
        let (d, params) = standardize_outcomes(&data, data.to_unit_time(raw))?;
        data = d;
        let p: Vec<String> = params.iter().map(|s| format!("{}/{}", s.center, s.scale)).collect();
        header.push(format!("standardized at {raw}: {}", p.join(",")));
    }
    if !args.negate.is_empty() {
        data = negate_components(&data, &args.negate)?;
        let c: Vec<String> = args.negate.iter().map(|c| c.to_string()).collect();
        header.push(format!("negated outcomes: {}", c.join(",")));
    }
    let (a, b) = data.domain();
    header.push(format!("domain: {a},{b}"));
    Ok((data, header))
}

fn write_header(out: &mut dyn Write, lines: &[String]) -> crate::Result<()> {
    for l in lines {
        writeln!(out, "# {l}")?;
    }
    Ok(())
}

fn unit_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

fn cmd_simulate(a: &SimulateArgs) -> crate::Result<()> {
    let cfg = SimConfig {
        n: a.n,
        sparsity: a.sparsity,
        score_dist: a.dist,
        delta: a.delta,
        sigma_e: a.sigma_e,
        seed: a.seed,
        ..SimConfig::default()
    };
    let (data, truth) = generate_dataset(&cfg)?;
    let mut header = vec!["mvftest simulate".to_string()];
    header.extend(cfg.header_lines());
    let mut out = BufWriter::new(File::create(&a.output)?);
    write_long_format(&data, &mut out, &header)?;
    out.flush()?;
    if let Some(path) = &a.truth {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, &header)?;
        let ids: Vec<String> = data.subjects().iter().map(|s| s.id().to_string()).collect();
        truth.write_table(&ids, &mut out)?;
        out.flush()?;
    }
    info!("wrote {} subjects to {}", data.n(), a.output.display());
    Ok(())
}

fn cmd_test(a: &TestArgs) -> crate::Result<()> {
    let (data, mut header) = load_input(&a.input)?;
    let cfg = PipelineConfig {
        pve: a.pve,
        variance: a.family.into(),
        alpha: a.alpha,
        permutation: a.permutation.map(|b| (b, a.seed)),
        ..PipelineConfig::default()
    };
    header.insert(0, "mvftest test".into());
    header.push(format!(
        "config: family={} pve={} alpha={} permutation={}",
        a.family.as_str(),
        a.pve,
        a.alpha,
        a.permutation.map_or("none".to_string(), |b| b.to_string())
    ));
    header.push(format!("seed: {}", a.seed));
    let (report, fit) = two_sample_pipeline(&data, &cfg)?;
    if let Some(path) = &a.output {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, &header)?;
        report.write_key_value(&mut out)?;
        out.flush()?;
    }
    if let Some(path) = &a.scores {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, &header)?;
        fit.scores.write_table(&mut out)?;
        out.flush()?;
    }
    let grid = unit_grid(101);
    if let Some(path) = &a.eigen {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, &header)?;
        fit.eigen.write_table(&grid, &mut out)?;
        out.flush()?;
    }
    if let Some(path) = &a.covariance {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, &header)?;
        for l in 0..data.q() {
            for l2 in 0..data.q() {
                writeln!(out, "# block {},{}", l + 1, l2 + 1)?;
                fit.covariance.write_grid(l, l2, &grid, &mut out)?;
            }
        }
        out.flush()?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn cmd_bands(a: &BandArgs) -> crate::Result<()> {
    let (data, mut header) = load_input(&a.input)?;
    let components: Vec<usize> = match a.component {
        Some(c) if c == 0 || c > data.q() => {
            return Err(Error::InvalidArgument(format!("component {c} outside 1..{}", data.q())))
        }
        Some(c) => vec![c - 1],
        None => (0..data.q()).collect(),
    };
    header.insert(0, "mvftest bands".into());
    header.push(format!("config: bootstrap={} alpha={}", a.bootstrap, a.alpha));
    header.push(format!("seed: {}", a.seed));
    let smoothing = PipelineConfig::default().smoothing;
    let mean = fit_mean(&data, &smoothing)?;
    let bands: Vec<EffectBand> = components
        .iter()
        .map(|&c| bootstrap_band(&data, &mean, smoothing.penalty_order, c, a.bootstrap, a.alpha, a.seed))
        .collect::<crate::Result<_>>()?;
    let mut out = BufWriter::new(File::create(&a.output)?);
    write_header(&mut out, &header)?;
    let crit: Vec<String> = bands.iter().map(|b| format!("{}:{}", b.component + 1, b.critical_value)).collect();
    writeln!(out, "# critical values: {} alpha_star: {}", crit.join(","), bands[0].alpha_star)?;
    writeln!(out, "{}", EffectBand::COLUMNS)?;
    for b in &bands {
        b.write_rows(data.domain(), &mut out)?;
    }
    out.flush()?;
    for b in &bands {
        println!(
            "component {}: critical value {:.4}, band {} zero",
            b.component + 1,
            b.critical_value,
            if b.contains_zero() { "contains" } else { "excludes" }
        );
    }
    Ok(())
}

fn cmd_study(kind: StudyKind, a: &StudyArgs, workers: usize) -> crate::Result<()> {
    let plan = StudyPlan::resolve(kind, a)?;
    let rows = run_study_plan(&plan, a.cell_dir.as_deref(), workers)?;
    let mut out = open_output(a.output.as_deref())?;
    write_header(&mut out, &plan.header_lines(kind))?;
    writeln!(out, "{STUDY_COLUMNS}")?;
    for r in &rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn run(cli: &Cli) -> crate::Result<()> {
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Test(a) => cmd_test(a),
        Command::SizeStudy(a) => cmd_study(StudyKind::Size, a, workers),
        Command::PowerStudy(a) => cmd_study(StudyKind::Power, a, workers),
        Command::Bands(a) => cmd_bands(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return EXIT_USAGE;
        }
    }
    let workers = cli.workers.unwrap_or_else(default_workers);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        log::debug!("global pool already set: {e}");
    }
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
