//! Stage-major workflow execution with per-stage timing and memory sampling.
//!
//! Every stage runs over all users before the next stage starts, so stage
//! times are directly comparable. Users are independent and processed by the
//! worker pool; results are collected in device order, so outputs do not
//! depend on the worker count.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{integrate_stays, IntegrateError};
use crate::io::{Corpus, DEFAULT_ACCURACY_SPLIT_M};
use crate::metrics::{aggregate_metrics, Cohort, MetricsError, MobilityMetrics};
use crate::model::{ChangePoints, LabeledRecord, LocationRecord, ModelError, Source, Stay};
use crate::oscillation::{correct_trace_records, correct_trace_stays};
use crate::par::Executor;
use crate::stay::{cluster_trace_records, cluster_trace_stays, segment_trace, stay_duration_filter, StayTrace};

use super::spec::{ClusterMode, InputStream, StageSpec, WorkflowSpec};
use super::validate::{has_errors, validate_workflow, Diagnostic};

#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    /// 0 uses every core; 1 runs sequentially.
    pub workers: usize,
    pub utc_offset_s: i64,
    pub accuracy_split_m: f64,
    /// Memory sampling period; `None` disables sampling.
    pub memory_sample_interval: Option<Duration>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            utc_offset_s: 0,
            accuracy_split_m: DEFAULT_ACCURACY_SPLIT_M,
            memory_sample_interval: Some(Duration::from_millis(250)),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("workflow `{name}` is invalid: {}", render(.diagnostics))]
    Invalid { name: String, diagnostics: Vec<Diagnostic> },
    #[error("device `{device_id}`, {stage} ({kind}): {source}")]
    Stage {
        device_id: String,
        /// Path such as `stages[0].gps[1]`.
        stage: String,
        kind: &'static str,
        #[source]
        source: StageError,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn render(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub stage: String,
    pub kind: String,
    pub seconds: f64,
    /// Seconds since the run started at which the stage finished.
    pub completed_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorySample {
    pub t_s: f64,
    pub rss_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProfile {
    pub workflow: String,
    pub workers: usize,
    pub users: usize,
    pub input_bytes: u64,
    pub input_rows: usize,
    pub stages: Vec<StageProfile>,
    pub total_seconds: f64,
    /// Resident set size over time; empty where the platform offers no probe.
    pub memory_samples: Vec<MemorySample>,
    pub peak_rss_mb: Option<f64>,
    pub output_labeled_rows: usize,
    pub output_stay_rows: usize,
}

/// Resident set size of this process in MB, from `/proc/self/status`.
pub fn resident_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// Background thread sampling resident memory until stopped.
struct MemorySampler {
    stop: mpsc::Sender<()>,
    handle: thread::JoinHandle<Vec<MemorySample>>,
}

impl MemorySampler {
    fn start(origin: Instant, every: Duration) -> Self {
        let (stop, rx) = mpsc::channel::<()>();
        let handle = thread::spawn(move || {
            let mut samples = Vec::new();
            loop {
                if let Some(mb) = resident_mb() {
                    samples.push(MemorySample {
                        t_s: origin.elapsed().as_secs_f64(),
                        rss_mb: mb,
                    });
                }
                match rx.recv_timeout(every) {
                    Err(mpsc::RecvTimeoutError::Timeout) => continue,
                    _ => break,
                }
            }
            samples
        });
        Self { stop, handle }
    }

    fn finish(self, origin: Instant) -> Vec<MemorySample> {
        let _ = self.stop.send(());
        let mut samples = self.handle.join().unwrap_or_default();
        if let Some(mb) = resident_mb() {
            samples.push(MemorySample {
                t_s: origin.elapsed().as_secs_f64(),
                rss_mb: mb,
            });
        }
        samples
    }
}

/// Outputs of one workflow run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowRun {
    pub name: String,
    /// One trace per user, ordered by device id.
    pub traces: Vec<StayTrace>,
    pub profile: RunProfile,
}

impl WorkflowRun {
    pub fn labeled(&self) -> Vec<LabeledRecord> {
        self.traces.iter().flat_map(StayTrace::labeled).collect()
    }

    pub fn stays(&self) -> Vec<Stay> {
        self.traces.iter().flat_map(|t| t.stays.iter().cloned()).collect()
    }

    pub fn stays_by_user(&self) -> BTreeMap<String, Vec<Stay>> {
        self.traces.iter().map(|t| (t.device_id.clone(), t.stays.clone())).collect()
    }

    pub fn metrics(&self, cohort: &Cohort, utc_offset_s: i64) -> Result<MobilityMetrics, MetricsError> {
        aggregate_metrics(&self.stays_by_user(), cohort, utc_offset_s)
    }
}

struct Runner<'a> {
    exec: Executor,
    cfg: &'a ExecConfig,
    origin: Instant,
    stages: Vec<StageProfile>,
}

type Outcome = Result<StayTrace, (String, StageError)>;

impl Runner<'_> {
    fn timed<T>(&mut self, stage: String, kind: &'static str, f: impl FnOnce(&Executor) -> T) -> T {
        let t0 = Instant::now();
        let out = f(&self.exec);
        self.stages.push(StageProfile {
            stage,
            kind: kind.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            completed_at_s: self.origin.elapsed().as_secs_f64(),
        });
        out
    }

    /// Runs a linear chain over every user's trace; stage paths count from
    /// `first`.
    fn chain(
        &mut self,
        stages: &[StageSpec],
        prefix: &str,
        first: usize,
        mut traces: Vec<StayTrace>,
        mut has_stays: bool,
        source: Source,
    ) -> Result<Vec<StayTrace>, PipelineError> {
        for (i, stage) in stages.iter().enumerate() {
            let path = format!("{prefix}[{}]", first + i);
            let offset = self.cfg.utc_offset_s;
            let post = has_stays;
            let outcomes: Vec<Outcome> = self.timed(path.clone(), stage.name(), |exec| {
                exec.map_owned(traces, |t| {
                    let id = t.device_id.clone();
                    apply(stage, t, post, offset, source).map_err(|e| (id, e))
                })
            });
            traces = collect(outcomes, &path, stage.name())?;
            has_stays |= produces_stays(stage);
            debug_assert!(traces.iter().all(|t| t.check().is_ok()), "stage output failed trace checks");
        }
        Ok(traces)
    }
}

fn produces_stays(stage: &StageSpec) -> bool {
    match stage {
        StageSpec::TraceSegmentation(_) | StageSpec::StayIntegrator(_) => true,
        StageSpec::IncrementalClustering(p) => p.mode == ClusterMode::Records,
        _ => false,
    }
}

fn collect(outcomes: Vec<Outcome>, path: &str, kind: &'static str) -> Result<Vec<StayTrace>, PipelineError> {
    outcomes
        .into_iter()
        .map(|o| {
            o.map_err(|(device_id, source)| PipelineError::Stage {
                device_id,
                stage: path.to_string(),
                kind,
                source,
            })
        })
        .collect()
}

/// One stage on one user. `post` is whether stays exist upstream.
fn apply(stage: &StageSpec, trace: StayTrace, post: bool, utc_offset_s: i64, source: Source) -> Result<StayTrace, StageError> {
    Ok(match stage {
        StageSpec::TraceSegmentation(p) => {
            let cp = ChangePoints::new(p.duration_min, p.distance_km, 5.0);
            segment_trace(&trace.device_id, trace.records, &cp, utc_offset_s, source)?
        }
        StageSpec::IncrementalClustering(p) => {
            let cp = ChangePoints::new(p.duration_min.unwrap_or(0.0), p.distance_km, 5.0);
            match p.mode {
                ClusterMode::Records => cluster_trace_records(&trace.device_id, trace.records, &cp, utc_offset_s, source)?,
                ClusterMode::Stays => cluster_trace_stays(&trace, &cp),
            }
        }
        StageSpec::StayDuration(p) => stay_duration_filter(&trace, p.duration_min),
        StageSpec::OscillationCorrector(p) => {
            if post {
                correct_trace_stays(&trace, p.osc_window_min, p.merge)?
            } else {
                correct_trace_records(&trace, p.osc_window_min, utc_offset_s)?
            }
        }
        StageSpec::StayIntegrator(_) => unreachable!("integrators run through the fusion path"),
    })
}

fn raw_traces(users: &BTreeMap<String, Vec<LocationRecord>>) -> Vec<StayTrace> {
    users.iter().map(|(id, r)| StayTrace::raw(id.clone(), r.clone())).collect()
}

/// Validates `spec`, then runs it over the selected stream of `corpus`.
pub fn execute_workflow(spec: &WorkflowSpec, corpus: &Corpus, cfg: &ExecConfig) -> Result<WorkflowRun, PipelineError> {
    let diagnostics = validate_workflow(spec);
    if has_errors(&diagnostics) {
        return Err(PipelineError::Invalid {
            name: spec.name.clone(),
            diagnostics,
        });
    }
    let origin = Instant::now();
    let sampler = cfg.memory_sample_interval.map(|every| MemorySampler::start(origin, every));
    let mut runner = Runner {
        exec: Executor::new(cfg.workers),
        cfg,
        origin,
        stages: Vec::new(),
    };
    let (gps, cellular) = corpus.split_by_accuracy(cfg.accuracy_split_m);
    let (traces, input_rows, users) = match spec.input {
        InputStream::Gps => (run_linear(&mut runner, spec, &gps, Source::Gps), gps.record_count(), gps.user_count()),
        InputStream::Cellular => (
            run_linear(&mut runner, spec, &cellular, Source::Cellular),
            cellular.record_count(),
            cellular.user_count(),
        ),
        InputStream::Both => (
            run_fused(&mut runner, spec, &gps, &cellular),
            corpus.record_count(),
            corpus.user_count(),
        ),
    };
    let memory_samples = sampler.map(|s| s.finish(origin)).unwrap_or_default();
    let traces = traces?;
    let profile = RunProfile {
        workflow: spec.name.clone(),
        workers: runner.exec.workers(),
        users,
        input_bytes: corpus.input_bytes,
        input_rows,
        total_seconds: origin.elapsed().as_secs_f64(),
        stages: runner.stages,
        peak_rss_mb: memory_samples.iter().map(|s| s.rss_mb).reduce(f64::max),
        memory_samples,
        output_labeled_rows: traces.iter().map(|t| t.records.len()).sum(),
        output_stay_rows: traces.iter().map(|t| t.stays.len()).sum(),
    };
    Ok(WorkflowRun {
        name: spec.name.clone(),
        traces,
        profile,
    })
}

fn run_linear(runner: &mut Runner<'_>, spec: &WorkflowSpec, stream: &Corpus, source: Source) -> Result<Vec<StayTrace>, PipelineError> {
    runner.chain(&spec.stages, "stages", 0, raw_traces(&stream.users), false, source)
}

/// Integrator first: each branch runs stage-major on its stream, then the
/// fusion step, then any remaining top-level stages.
fn run_fused(runner: &mut Runner<'_>, spec: &WorkflowSpec, gps: &Corpus, cellular: &Corpus) -> Result<Vec<StayTrace>, PipelineError> {
    let StageSpec::StayIntegrator(p) = &spec.stages[0] else {
        unreachable!("validation guarantees a leading integrator");
    };
    let ids: BTreeSet<&String> = gps.users.keys().chain(cellular.users.keys()).collect();
    let side = |c: &Corpus| -> Vec<StayTrace> {
        ids.iter()
            .map(|&id| StayTrace::raw(id.clone(), c.users.get(id).cloned().unwrap_or_default()))
            .collect()
    };
    let g = runner.chain(&p.gps, "stages[0].gps", 0, side(gps), false, Source::Gps)?;
    let c = runner.chain(&p.cellular, "stages[0].cellular", 0, side(cellular), false, Source::Cellular)?;
    let cp = ChangePoints::new(p.duration_min, crate::integrator::CONTIGUITY_KM, p.osc_window_min);
    let rules = p.rules;
    let pairs: Vec<(StayTrace, StayTrace)> = g.into_iter().zip(c).collect();
    let outcomes: Vec<Outcome> = runner.timed("stages[0]".into(), "stay_integrator", |exec| {
        exec.map_owned(pairs, |(g, c)| {
            let id = g.device_id.clone();
            integrate_stays(&g, &c, &cp, &rules).map_err(|e| (id, StageError::from(e)))
        })
    });
    let fused = collect(outcomes, "stages[0]", "stay_integrator")?;
    runner.chain(&spec.stages[1..], "stages", 1, fused, true, Source::Merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{generate_synthetic, SynthConfig};
    use crate::pipeline::spec::{preset, StageSpec};

    fn quiet(workers: usize) -> ExecConfig {
        ExecConfig {
            workers,
            memory_sample_interval: None,
            ..Default::default()
        }
    }

    fn corpus(cfg: SynthConfig) -> Corpus {
        generate_synthetic(&cfg).unwrap().corpus()
    }

    #[test]
    fn empty_input_gives_empty_outputs() {
        let empty = Corpus::from_records(Vec::new(), 0);
        for name in crate::pipeline::PRESET_NAMES {
            let run = execute_workflow(&preset(name).unwrap(), &empty, &quiet(2)).unwrap();
            assert!(run.traces.is_empty(), "{name}");
            assert_eq!(run.profile.input_rows, 0);
            assert_eq!(run.profile.output_labeled_rows, 0);
            assert_eq!(run.profile.output_stay_rows, 0);
        }
    }

    #[test]
    fn worker_count_does_not_change_outputs() {
        let c = corpus(SynthConfig {
            users: 6,
            days: 2,
            osc_rate: 0.05,
            ..Default::default()
        });
        for name in crate::pipeline::PRESET_NAMES {
            let spec = preset(name).unwrap();
            let one = execute_workflow(&spec, &c, &quiet(1)).unwrap();
            let many = execute_workflow(&spec, &c, &quiet(8)).unwrap();
            assert_eq!(one.traces, many.traces, "{name}");
            assert!(!one.stays().is_empty(), "{name} found no stays");
        }
    }

    #[test]
    fn post_correction_does_not_add_trips() {
        let c = corpus(SynthConfig {
            users: 8,
            days: 3,
            gps_fraction: 0.0,
            osc_rate: 0.2,
            ..Default::default()
        });
        let cfg = quiet(0);
        let w1 = execute_workflow(&preset("workflow1").unwrap(), &c, &cfg).unwrap();
        let w2 = execute_workflow(&preset("workflow2").unwrap(), &c, &cfg).unwrap();
        let m1 = w1.metrics(&Cohort::All, 0).unwrap();
        let m2 = w2.metrics(&Cohort::All, 0).unwrap();
        assert!(m2.trips_per_person_day <= m1.trips_per_person_day, "{m2:?} vs {m1:?}");
    }

    #[test]
    fn profile_is_consistent() {
        let c = corpus(SynthConfig {
            users: 4,
            days: 2,
            ..Default::default()
        });
        let cfg = ExecConfig {
            memory_sample_interval: Some(Duration::from_millis(5)),
            ..quiet(2)
        };
        let run = execute_workflow(&preset("integration").unwrap(), &c, &cfg).unwrap();
        let p = &run.profile;
        let names: Vec<&str> = p.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(names[0], "stages[0].gps[0]");
        assert_eq!(*names.last().unwrap(), "stages[0]");
        assert!(p.stages.iter().map(|s| s.seconds).sum::<f64>() <= p.total_seconds);
        assert!(p.stages.windows(2).all(|w| w[0].completed_at_s <= w[1].completed_at_s));
        assert!(p.memory_samples.windows(2).all(|w| w[0].t_s <= w[1].t_s));
        assert_eq!(p.input_rows, c.record_count());
        assert_eq!(p.output_stay_rows, run.stays().len());
    }

    #[test]
    fn invalid_specs_are_rejected_before_running() {
        let spec = WorkflowSpec {
            name: "bad".into(),
            input: InputStream::Gps,
            stages: vec![StageSpec::sdc(5.0)],
            allow_out_of_range: false,
        };
        let err = execute_workflow(&spec, &Corpus::from_records(Vec::new(), 0), &quiet(1)).unwrap_err();
        match err {
            PipelineError::Invalid { diagnostics, .. } => assert_eq!(diagnostics[0].code, "E001"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn stage_errors_name_device_and_stage() {
        // Ingest always sorts, so drive the chain directly with bad input.
        let unsorted = vec![
            LocationRecord::new("u1", 60, 0.0, 0.0, 10.0),
            LocationRecord::new("u1", 0, 0.0, 0.0, 10.0),
        ];
        let traces = vec![
            StayTrace::raw("u0", vec![LocationRecord::new("u0", 0, 0.0, 0.0, 10.0)]),
            StayTrace::raw("u1", unsorted),
        ];
        let cfg = quiet(1);
        let mut runner = Runner {
            exec: Executor::new(1),
            cfg: &cfg,
            origin: Instant::now(),
            stages: Vec::new(),
        };
        let stages = [StageSpec::osc(5.0), StageSpec::ts(5.0, 0.2)];
        let err = runner.chain(&stages, "stages", 1, traces, false, Source::Gps).unwrap_err();
        match err {
            PipelineError::Stage { device_id, stage, kind, .. } => {
                assert_eq!(device_id, "u1");
                assert_eq!(stage, "stages[1]");
                assert_eq!(runner.stages.len(), 1, "later stages do not run");
                assert_eq!(kind, "oscillation_corrector");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn resident_probe_reports_something_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(resident_mb().unwrap() > 0.0);
        }
    }
}
