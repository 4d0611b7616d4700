//! `maw`: ingest location records, run stay/trip workflows, compare them and
//! profile their cost.
//!
//! Exit status is 0 on success, 2 when a workflow, configuration or argument
//! is invalid, and 1 for any other failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use maw_core::io::{
    generate_sized, generate_synthetic, read_records, read_stays, write_outputs, write_records, Corpus, IngestConfig,
    IngestError, OutputSet, SynthConfig, SynthError, DEFAULT_ACCURACY_SPLIT_M,
};
use maw_core::metrics::{aggregate_metrics, Cohort, MetricsError, MobilityMetrics};
use maw_core::model::Stay;
use maw_core::pipeline::{
    compare_workflows_with_runs, execute_workflow, has_errors, parse_workflow, scaling_probe, validate_workflow,
    ExecConfig, InputStream, Overrides, ParseError, PipelineError, Severity, WorkflowRun, WorkflowSpec,
};

#[derive(Parser)]
#[command(name = "maw", version, about = "Stay, trip and mobility-metric inference from location records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, deduplicate and split records into GPS and cellular streams.
    Ingest(IngestArgs),
    /// Run one workflow and write labeled records, stays, metrics and a profile.
    Run(RunArgs),
    /// Run several workflows and score them on their shared user cohort.
    Compare(CompareArgs),
    /// Compute mobility metrics from a stays CSV.
    Metrics(MetricsArgs),
    /// Generate a seeded synthetic corpus with ground-truth stays.
    Synth(SynthArgs),
    /// Time a workflow on synthetic corpora of growing size.
    Profile(ProfileArgs),
    /// Check a workflow without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Records CSV files (`device_id,timestamp,lat,lon,accuracy_m`).
    #[arg(long = "input", short = 'i', required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Records with accuracy below this many metres are GPS.
    #[arg(long, default_value_t = DEFAULT_ACCURACY_SPLIT_M)]
    accuracy_split_m: f64,
    /// Local time offset from UTC, minutes.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_min: i64,
    /// Also accept ISO-8601 UTC timestamps.
    #[arg(long)]
    iso_timestamps: bool,
}

impl InputArgs {
    fn ingest_config(&self, workers: usize) -> IngestConfig {
        IngestConfig {
            accuracy_split_m: self.accuracy_split_m,
            utc_offset_min: self.utc_offset_min,
            iso_timestamps: self.iso_timestamps,
            workers,
        }
    }

    fn load(&self, workers: usize) -> Result<Corpus> {
        Ok(read_records(&self.inputs, &self.ingest_config(workers))?)
    }

    fn exec_config(&self, workers: usize) -> ExecConfig {
        ExecConfig {
            workers,
            utc_offset_s: self.utc_offset_min * 60,
            accuracy_split_m: self.accuracy_split_m,
            memory_sample_interval: Some(Duration::from_millis(250)),
        }
    }
}

#[derive(Args, Clone, Copy)]
struct OverrideArgs {
    /// Replace every distance threshold, km.
    #[arg(long, allow_hyphen_values = true)]
    distance_km: Option<f64>,
    /// Replace every duration threshold, minutes.
    #[arg(long, allow_hyphen_values = true)]
    duration_min: Option<f64>,
    /// Replace every oscillation window, minutes.
    #[arg(long, allow_hyphen_values = true)]
    osc_window_min: Option<f64>,
    /// Accept change points outside the tested ranges.
    #[arg(long)]
    allow_out_of_range: bool,
}

impl OverrideArgs {
    fn apply(&self, spec: WorkflowSpec) -> WorkflowSpec {
        let mut spec = spec.with_overrides(&Overrides {
            duration_min: self.duration_min,
            distance_km: self.distance_km,
            osc_window_min: self.osc_window_min,
        });
        spec.allow_out_of_range |= self.allow_out_of_range;
        spec
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Directory for `gps.csv` and `cellular.csv`.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    /// `preset:workflowN`, a preset name, or a JSON workflow file.
    #[arg(long, short)]
    workflow: String,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Skip writing `profile.json`.
    #[arg(long)]
    no_profile: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, short, required = true, num_args = 2..)]
    workflows: Vec<String>,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[command(flatten)]
    input: InputArgs,
    /// Writes `comparison.json` and one output directory per workflow.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct MetricsArgs {
    /// Stays CSV files as written by `maw run`.
    #[arg(long, required = true, num_args = 1..)]
    stays: Vec<PathBuf>,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_min: i64,
    /// Writes `metrics.json` and `histogram.csv` here instead of printing.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    gps_fraction: Option<f64>,
    #[arg(long)]
    gps_noise_m: Option<f64>,
    #[arg(long)]
    cell_noise_m: Option<f64>,
    /// Probability of a ping-pong event after a cellular in-stay record.
    #[arg(long)]
    osc_rate: Option<f64>,
    #[arg(long)]
    tower_distance_km: Option<f64>,
    /// Keep adding users until the records file reaches this size.
    #[arg(long)]
    target_mb: Option<f64>,
    /// Directory for `records.csv` and `truth.csv`.
    #[arg(long, short)]
    out: PathBuf,
}

impl SynthArgs {
    fn config(&self) -> Result<SynthConfig> {
        let mut cfg: SynthConfig = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())))?
            }
            None => SynthConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(seed, users, days, gps_fraction, gps_noise_m, cell_noise_m, osc_rate, tower_distance_km);
        Ok(cfg)
    }
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, short, default_value = "preset:workflow6")]
    workflow: String,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Corpus sizes as multiples of `--base-mb`.
    #[arg(long, default_value = "1x,2x,4x")]
    sizes: String,
    #[arg(long, default_value_t = 10.0)]
    base_mb: f64,
    /// Subsample whole users from these records instead of generating data.
    #[arg(long = "input", short = 'i', num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Runs per size; the median time is kept.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Writes the scaling report as JSON.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, short)]
    workflow: String,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Print the resolved workflow as JSON.
    #[arg(long)]
    print: bool,
}

/// A problem with what the user asked for rather than with running it.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|e| {
        e.is::<Invalid>()
            || e.is::<ParseError>()
            || e.is::<SynthError>()
            || matches!(e.downcast_ref(), Some(IngestError::Config(_)))
            || matches!(
                e.downcast_ref(),
                Some(PipelineError::Invalid { .. } | PipelineError::Usage(_))
            )
    });
    if invalid {
        2
    } else {
        1
    }
}

/// The error and its causes, skipping causes already quoted by their parent.
fn render_error(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    let mut last = msg.clone();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !last.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
        last = c;
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Metrics(a) => metrics(a),
        Command::Synth(a) => synth(a),
        Command::Profile(a) => profile(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Reads a workflow from a preset name or a JSON file.
fn load_workflow(arg: &str) -> Result<WorkflowSpec> {
    let path = Path::new(arg);
    if !arg.starts_with("preset:") && path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        return parse_workflow(&text).with_context(|| format!("in {arg}"));
    }
    Ok(parse_workflow(arg)?)
}

fn checked_workflow(arg: &str, o: &OverrideArgs) -> Result<WorkflowSpec> {
    let spec = o.apply(load_workflow(arg)?);
    let (errors, warnings): (Vec<_>, Vec<_>) =
        validate_workflow(&spec).into_iter().partition(|d| d.severity == Severity::Error);
    for w in &warnings {
        eprintln!("{w}");
    }
    if !errors.is_empty() {
        return Err(PipelineError::Invalid {
            name: spec.name.clone(),
            diagnostics: errors,
        }
        .into());
    }
    Ok(spec)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let corpus = a.input.load(a.workers)?;
    let (gps, cellular) = corpus.split_by_accuracy(a.input.accuracy_split_m);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, part) in [("gps.csv", &gps), ("cellular.csv", &cellular)] {
        let p = a.out.join(name);
        write_records(&p, part.records()).with_context(|| format!("writing {}", p.display()))?;
    }
    let summary = serde_json::json!({
        "users": corpus.user_count(),
        "records": corpus.record_count(),
        "gps_records": gps.record_count(),
        "cellular_records": cellular.record_count(),
        "person_days": corpus.day_trajectories(a.input.utc_offset_min * 60).len(),
        "input_bytes": corpus.input_bytes,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Metrics on `cohort`, or `None` when nobody in it has a stay.
fn optional_metrics(run: &WorkflowRun, cohort: &Cohort, utc_offset_s: i64) -> Result<Option<MobilityMetrics>> {
    match run.metrics(cohort, utc_offset_s) {
        Ok(m) => Ok(Some(m)),
        Err(MetricsError::EmptyCohort) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_run(dir: &Path, run: &WorkflowRun, metrics: Option<&MobilityMetrics>, with_profile: bool) -> Result<()> {
    let labeled = run.labeled();
    let stays = run.stays();
    let set = OutputSet {
        labeled: &labeled,
        stays: &stays,
        metrics,
        profile: with_profile.then_some(&run.profile),
    };
    write_outputs(dir, &set)?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let spec = checked_workflow(&a.workflow, &a.overrides)?;
    let cfg = a.input.exec_config(a.workers);
    let corpus = a.input.load(a.workers)?;
    let run = execute_workflow(&spec, &corpus, &cfg)?;
    let metrics = optional_metrics(&run, &Cohort::All, cfg.utc_offset_s)?;
    write_run(&a.out, &run, metrics.as_ref(), !a.no_profile)?;
    let p = &run.profile;
    println!(
        "{}: {} users, {} records -> {} stays in {:.3}s; wrote {}",
        spec.name,
        p.users,
        p.input_rows,
        p.output_stay_rows,
        p.total_seconds,
        a.out.display()
    );
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let specs = a
        .workflows
        .iter()
        .map(|w| checked_workflow(w, &a.overrides))
        .collect::<Result<Vec<_>>>()?;
    let cfg = a.input.exec_config(a.workers);
    let corpus = a.input.load(a.workers)?;
    let (report, runs) = compare_workflows_with_runs(&specs, &corpus, &cfg)?;
    print!("{}", report.table());
    if let Some(out) = &a.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let text = serde_json::to_string_pretty(&report)? + "\n";
        fs::write(out.join("comparison.json"), text)?;
        for (i, (run, row)) in runs.iter().zip(&report.rows).enumerate() {
            write_run(&out.join(format!("{}-{}", i + 1, run.name)), run, Some(&row.metrics), true)?;
        }
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let mut by_user: BTreeMap<String, Vec<Stay>> = BTreeMap::new();
    for p in &a.stays {
        for s in read_stays(p)? {
            by_user.entry(s.device_id.clone()).or_default().push(s);
        }
    }
    for stays in by_user.values_mut() {
        stays.sort_by_key(|s| (s.start, s.end));
    }
    let m = match aggregate_metrics(&by_user, &Cohort::All, a.utc_offset_min * 60) {
        Ok(m) => Some(m),
        Err(MetricsError::EmptyCohort) => None,
        Err(e) => return Err(e.into()),
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let text = serde_json::to_string_pretty(&m)? + "\n";
            fs::write(dir.join(maw_core::io::METRICS_FILE), text)?;
            maw_core::io::write_histogram(&dir.join(maw_core::io::HISTOGRAM_FILE), m.as_ref())?;
        }
        None => println!("{}", serde_json::to_string_pretty(&m)?),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.config()?;
    let out = match a.target_mb {
        Some(mb) if mb > 0.0 => generate_sized(&cfg, (mb * 1e6) as u64)?,
        Some(mb) => bail!(Invalid(format!("--target-mb must be positive, got {mb}"))),
        None => generate_synthetic(&cfg)?,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    out.write(&a.out.join("records.csv"), &a.out.join("truth.csv"))?;
    let users = out.truth.iter().map(|t| t.device_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    println!(
        "{} users, {} records ({} bytes), {} true stays, {} ping-pong events; wrote {}",
        users,
        out.records.len(),
        out.csv_bytes,
        out.truth.len(),
        out.pings,
        a.out.display()
    );
    Ok(())
}

/// `1x,2x,4x` or `1,2,4` into multipliers.
fn parse_sizes(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s
                .strip_suffix('x')
                .unwrap_or(s)
                .parse()
                .map_err(|_| Invalid(format!("bad size `{s}`; expected e.g. 2x")))?;
            if !(v.is_finite() && v > 0.0) {
                bail!(Invalid(format!("size `{s}` must be positive")));
            }
            Ok((s.to_string(), v))
        })
        .collect()
}

/// The smallest prefix of users (in device order) reaching `target` bytes.
fn subsample(corpus: &Corpus, target: u64) -> Result<Corpus> {
    let mut users = BTreeMap::new();
    let mut bytes = 0u64;
    for (id, records) in &corpus.users {
        if bytes >= target {
            break;
        }
        bytes += records.iter().map(maw_core::io::csv_line_len).sum::<u64>();
        users.insert(id.clone(), records.clone());
    }
    if bytes < target {
        bail!(Invalid(format!("input holds {bytes} bytes of records, fewer than the {target} requested")));
    }
    Ok(Corpus { users, input_bytes: bytes })
}

fn profile(a: ProfileArgs) -> Result<()> {
    let spec = checked_workflow(&a.workflow, &a.overrides)?;
    let sizes = parse_sizes(&a.sizes)?;
    let cfg = ExecConfig {
        workers: a.workers,
        ..Default::default()
    };
    let source = if a.inputs.is_empty() {
        None
    } else {
        Some(read_records(&a.inputs, &IngestConfig { workers: a.workers, ..Default::default() })?)
    };
    let synth = SynthConfig {
        seed: a.seed,
        gps_fraction: match spec.input {
            InputStream::Gps => 1.0,
            InputStream::Cellular => 0.0,
            InputStream::Both => 0.5,
        },
        ..Default::default()
    };
    let mut corpora = Vec::new();
    for (label, mult) in &sizes {
        let target = (a.base_mb * mult * 1e6) as u64;
        let c = match &source {
            Some(src) => subsample(src, target)?,
            None => {
                let out = generate_sized(&synth, target)?;
                let bytes = out.csv_bytes;
                Corpus { input_bytes: bytes, ..out.corpus() }
            }
        };
        eprintln!("{label}: {} users, {} bytes", c.user_count(), c.input_bytes);
        corpora.push((label.clone(), c));
    }
    let report = scaling_probe(&spec, &corpora, &cfg, a.repeats)?;
    println!("{:<8} {:>12} {:>10} {:>10}", "size", "bytes", "rows", "seconds");
    for p in &report.points {
        println!("{:<8} {:>12} {:>10} {:>10.4}", p.label, p.input_bytes, p.input_rows, p.seconds);
    }
    match report.fit.r_squared {
        Some(r2) => println!(
            "fit: {:.4} s/MB + {:.4} s, R^2 = {r2:.4}",
            report.fit.slope_s_per_mb, report.fit.intercept_s
        ),
        None => println!("fit: degenerate (R^2 undefined), mean {:.4} s", report.fit.intercept_s),
    }
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let spec = a.overrides.apply(load_workflow(&a.workflow)?);
    let diags = validate_workflow(&spec);
    for d in &diags {
        println!("{d}");
    }
    if a.print {
        println!("{}", spec.to_json());
    }
    if has_errors(&diags) {
        let n = diags.iter().filter(|d| d.severity == Severity::Error).count();
        bail!(Invalid(format!("workflow `{}` has {n} error(s)", spec.name)));
    }
    println!("{}: ok", spec.name);
    Ok(())
}
