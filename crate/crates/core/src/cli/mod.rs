//! Command-line harness: `gen`, `run`, `report` and `compare`.
//!
//! Exit codes are 0 on success, 1 on usage errors and 2 on data errors.

pub mod records;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{load_csv, split, write_csv, Dataset, Generator, Role, TargetColumn};
use crate::evolve::{run, Budget, EngineConfig, ModeConfig};
use crate::stats::{compare_vs_baseline, mann_whitney_u, summarize, ComparisonResult, RunMetrics, Summary};
use records::{read_records, Appender, RunRecord, Timing};

pub const RECORDS_FILE: &str = "runs.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lcfgp", version, about = "Multi-gene GP symbolic regression with LCF leaves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark dataset as train/test CSV plus a manifest.
    Gen(GenArgs),
    /// Run configurations over seeds and append run records.
    Run(RunArgs),
    /// Summarize run records per configuration.
    Report(ReportArgs),
    /// Test one configuration against another.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// s<d>d, rs<d>d, k11c or ub5d.
    pub name: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Generator name or path to a CSV file.
    #[arg(long)]
    pub dataset: String,
    /// Explicit test CSV; without it a CSV dataset is split.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Configuration codename; repeatable.
    #[arg(long = "config", required = true)]
    pub configs: Vec<String>,
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, conflicts_with = "seconds")]
    pub generations: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Seed of run 0; run i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// `last`, a zero-based column index or a header name.
    #[arg(long = "target-col", default_value = "last")]
    pub target_col: String,
    /// Seeds the generator or the train/test split.
    #[arg(long = "split-seed", default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub ratio: f64,
    /// CSV files have no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding runs.jsonl.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bonferroni comparison count; defaults to the non-baseline
    /// configurations present.
    #[arg(long)]
    pub comparisons: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Candidate codename.
    #[arg(long)]
    pub config: String,
    #[arg(long, default_value = "baseline")]
    pub against: String,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub comparisons: usize,
}

/// Parses `args` (program name first) and runs the command.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Report(a) => cmd_report(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub d: usize,
    pub train: String,
    pub test: String,
    pub train_rows: usize,
    pub test_rows: usize,
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let generator: Generator = a.name.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    let (train, test) = generator.generate(a.seed);
    fs::create_dir_all(&a.out).map_err(data_err)?;
    let name = generator.to_string();
    let train_file = format!("{name}_train.csv");
    let test_file = format!("{name}_test.csv");
    for (data, file) in [(&train, &train_file), (&test, &test_file)] {
        let f = fs::File::create(a.out.join(file)).map_err(data_err)?;
        write_csv(data, std::io::BufWriter::new(f)).map_err(data_err)?;
    }
    let manifest = Manifest {
        generator: name.clone(),
        seed: a.seed,
        d: train.d(),
        train: train_file,
        test: test_file,
        train_rows: train.n(),
        test_rows: test.n(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(a.out.join(format!("{name}_manifest.json")), text + "\n").map_err(data_err)?;
    writeln!(out, "{name}: {} train rows, {} test rows", train.n(), test.n()).map_err(data_err)?;
    Ok(())
}

/// Resolves `--dataset` into a named train/test pair.
pub fn resolve_dataset(a: &RunArgs) -> Result<(String, Dataset, Dataset), CliError> {
    if let Ok(generator) = a.dataset.parse::<Generator>() {
        let path = Path::new(&a.dataset);
        if !path.exists() {
            let (train, test) = generator.generate(a.split_seed);
            return Ok((generator.to_string(), train, test));
        }
    }
    let target: TargetColumn = a.target_col.parse().expect("infallible");
    let header = !a.no_header;
    let path = Path::new(&a.dataset);
    let full = load_csv(path, &target, header).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let name = full.name.clone();
    match &a.test {
        Some(test_path) => {
            let mut test = load_csv(test_path, &target, header)
                .map_err(|e| CliError::Data(format!("{}: {e}", test_path.display())))?;
            test.role = Role::Test;
            Ok((name, full, test))
        }
        None => {
            if !(a.ratio > 0.0 && a.ratio < 1.0) {
                return Err(CliError::Usage(format!("--ratio {} must be in (0, 1)", a.ratio)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.split_seed);
            let (train, test) = split(&full, a.ratio, &mut rng).map_err(data_err)?;
            Ok((name, train, test))
        }
    }
}

pub fn budget_of(generations: Option<usize>, seconds: Option<f64>) -> Result<Budget, CliError> {
    match (generations, seconds) {
        (Some(0), _) => Err(CliError::Usage("--generations must be positive".into())),
        (Some(g), None) => Ok(Budget::generations(g)),
        (None, Some(s)) if s.is_finite() && s > 0.0 => Ok(Budget::seconds(s)),
        (None, Some(_)) => Err(CliError::Usage("--seconds must be positive".into())),
        (None, None) => Err(CliError::Usage("one of --generations or --seconds is required".into())),
        (Some(_), Some(_)) => Err(CliError::Usage("--generations and --seconds are exclusive".into())),
    }
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let modes = a
        .configs
        .iter()
        .map(|c| c.parse::<ModeConfig>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let budget = budget_of(a.generations, a.seconds)?;
    let (name, train, test) = resolve_dataset(a)?;
    if train.is_target_constant() {
        return Err(CliError::Data(format!("{name}: training target is constant")));
    }
    fs::create_dir_all(&a.out).map_err(data_err)?;
    let mut records = Appender::open(&a.out.join(RECORDS_FILE)).map_err(data_err)?;
    let mut timings = Appender::open(&a.out.join(TIMINGS_FILE)).map_err(data_err)?;
    for mode in modes {
        let cfg = EngineConfig::for_mode(mode);
        for i in 0..a.runs {
            let seed = a.seed.wrapping_add(i as u64);
            let result = run(&cfg, mode, &train, &test, budget, seed).map_err(data_err)?;
            let record = RunRecord::from_result(&result, &name);
            records.append(&record).map_err(data_err)?;
            let wall_secs = result.history.last().map_or(0.0, |h| h.elapsed_secs);
            timings
                .append(&Timing {
                    codename: record.codename.clone(),
                    seed,
                    wall_secs,
                })
                .map_err(data_err)?;
            writeln!(
                out,
                "{name} {mode} seed {seed}: train R2 {:.6} test R2 {:.6} ({} gens)",
                record.train_r2, record.test_r2, record.generations
            )
            .map_err(data_err)?;
        }
    }
    Ok(())
}

/// One group of records in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub codename: String,
    pub summary: Summary,
    pub vs_baseline: Option<ComparisonResult>,
}

fn metrics(records: &[&RunRecord]) -> Vec<RunMetrics> {
    records
        .iter()
        .map(|r| RunMetrics {
            train_r2: r.train_r2,
            test_r2: r.test_r2,
            lcf_ratio: r.lcf_ratio,
            mean_depth: r.mean_depth,
        })
        .collect()
}

/// Groups by dataset, then codename in order of first appearance.
fn group(records: &[RunRecord]) -> BTreeMap<String, Vec<(String, Vec<&RunRecord>)>> {
    let mut by: BTreeMap<String, Vec<(String, Vec<&RunRecord>)>> = BTreeMap::new();
    for r in records {
        let groups = by.entry(r.dataset.clone()).or_default();
        match groups.iter_mut().find(|(c, _)| *c == r.codename) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.codename.clone(), vec![r])),
        }
    }
    by
}

/// Summaries and baseline comparisons for every (dataset, codename) group.
pub fn build_report(records: &[RunRecord], alpha: f64, comparisons: Option<usize>) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for (dataset, groups) in group(records) {
        let baseline = groups.iter().find(|(c, _)| c == "baseline").map(|(_, v)| v);
        let others = groups.iter().filter(|(c, _)| c != "baseline").count();
        let m = comparisons.unwrap_or(others).max(1);
        let base_test: Option<Vec<f64>> = baseline.map(|b| b.iter().map(|r| r.test_r2).collect());
        for (codename, runs) in &groups {
            let vs_baseline = match &base_test {
                Some(base) if codename != "baseline" => {
                    let cfg: Vec<f64> = runs.iter().map(|r| r.test_r2).collect();
                    Some(compare_vs_baseline(&cfg, base, alpha, m))
                }
                _ => None,
            };
            rows.push(ReportRow {
                dataset: dataset.clone(),
                codename: codename.clone(),
                summary: summarize(&metrics(runs)),
                vs_baseline,
            });
        }
    }
    rows
}

fn fmt_r2(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        format!("{v}")
    }
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let mut current: Option<&str> = None;
    let with_vb = |d: &str| rows.iter().any(|r| r.dataset == d && r.vs_baseline.is_some());
    for r in rows {
        if current != Some(r.dataset.as_str()) {
            current = Some(&r.dataset);
            if !s.is_empty() {
                s.push('\n');
            }
            s.push_str(&format!("dataset {}", r.dataset));
            if let Some(alpha) = rows.iter().find(|x| x.dataset == r.dataset).and_then(|_| {
                rows.iter()
                    .filter(|x| x.dataset == r.dataset)
                    .find_map(|x| x.vs_baseline.map(|c| c.alpha))
            }) {
                s.push_str(&format!(" (alpha {alpha:.6})"));
            }
            s.push('\n');
            s.push_str(&format!(
                "{:<9}{:>5}{:>11}{:>19}{:>11}{:>19}{:>9}{:>7}",
                "config", "runs", "train med", "train max/min", "test med", "test max/min", "LCF", "depth"
            ));
            if with_vb(&r.dataset) {
                s.push_str(&format!("{:>4}", "vb"));
            }
            s.push('\n');
        }
        let t = &r.summary;
        s.push_str(&format!(
            "{:<9}{:>5}{:>11}{:>19}{:>11}{:>19}{:>9.3}{:>7.2}",
            r.codename,
            t.runs,
            fmt_r2(t.train.median),
            format!("{}/{}", fmt_r2(t.train.max), fmt_r2(t.train.min)),
            fmt_r2(t.test.median),
            format!("{}/{}", fmt_r2(t.test.max), fmt_r2(t.test.min)),
            t.mean_lcf_ratio,
            t.mean_depth,
        ));
        if with_vb(&r.dataset) {
            let v = r.vs_baseline.map_or("", |c| c.verdict.symbol());
            s.push_str(&format!("{v:>4}"));
        }
        s.push('\n');
    }
    s
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "dataset,codename,runs,train_median,train_max,train_min,test_median,test_max,test_min,mean_lcf_ratio,mean_depth,vb,p,alpha\n",
    );
    for r in rows {
        let t = &r.summary;
        let (vb, p, alpha) = match r.vs_baseline {
            Some(c) => (c.verdict.symbol().to_string(), format!("{:?}", c.p_two_sided), format!("{:?}", c.alpha)),
            None => (String::new(), String::new(), String::new()),
        };
        s.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{}\n",
            r.dataset, r.codename, t.runs, t.train.median, t.train.max, t.train.min, t.test.median, t.test.max,
            t.test.min, t.mean_lcf_ratio, t.mean_depth, vb, p, alpha
        ));
    }
    s
}

/// Per-generation best training R² of every run, for plotting.
pub fn traces_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("dataset,codename,seed,generation,best_train_r2\n");
    for r in records {
        for (g, v) in r.trace.iter().enumerate() {
            s.push_str(&format!("{},{},{},{g},{v:?}\n", r.dataset, r.codename, r.seed));
        }
    }
    s
}

fn load_dir(dir: &Path) -> Result<Vec<RunRecord>, CliError> {
    let path = dir.join(RECORDS_FILE);
    let records = read_records(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.comparisons == Some(0) {
        return Err(CliError::Usage("--comparisons must be at least 1".into()));
    }
    let records = load_dir(&a.out)?;
    let rows = build_report(&records, a.alpha, a.comparisons);
    write!(out, "{}", render_table(&rows)).map_err(data_err)?;
    fs::write(a.out.join("report.csv"), report_csv(&rows)).map_err(data_err)?;
    fs::write(a.out.join("traces.csv"), traces_csv(&records)).map_err(data_err)?;
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.comparisons == 0 {
        return Err(CliError::Usage("--comparisons must be at least 1".into()));
    }
    let records = load_dir(&a.out)?;
    let pick = |code: &str| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.codename.eq_ignore_ascii_case(code))
            .filter(|r| a.dataset.as_ref().is_none_or(|d| &r.dataset == d))
            .map(|r| r.test_r2)
            .collect()
    };
    let (cand, base) = (pick(&a.config), pick(&a.against));
    if cand.is_empty() || base.is_empty() {
        let missing = if cand.is_empty() { &a.config } else { &a.against };
        return Err(CliError::Data(format!("no records for `{missing}`")));
    }
    let mw = mann_whitney_u(&cand, &base);
    let c = compare_vs_baseline(&cand, &base, a.alpha, a.comparisons);
    writeln!(
        out,
        "{} vs {}: U = {} ({} and {} runs), p = {:.6} ({:?}), alpha = {:.6}, verdict {:?} {}",
        a.config,
        a.against,
        c.u_statistic,
        cand.len(),
        base.len(),
        c.p_two_sided,
        mw.method,
        c.alpha,
        c.verdict,
        c.verdict.symbol()
    )
    .map_err(data_err)?;
    Ok(())
}
