//! Side-by-side workflow comparison and the data-volume scaling probe.

use serde::{Deserialize, Serialize};

use crate::io::Corpus;
use crate::metrics::{Cohort, MobilityMetrics};

use super::exec::{execute_workflow, ExecConfig, PipelineError, RunProfile, WorkflowRun};
use super::spec::WorkflowSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub workflow: String,
    pub metrics: MobilityMetrics,
    pub profile: RunProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Users with at least one stay under every compared workflow.
    pub cohort_users: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// Plain-text table of the headline metrics.
    pub fn table(&self) -> String {
        let mut s = format!(
            "cohort: {} users\n{:<24} {:>12} {:>12} {:>10} {:>10}\n",
            self.cohort_users, "workflow", "trips/day", "rg_km/day", "trips", "seconds"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<24} {:>12.4} {:>12.4} {:>10} {:>10.3}\n",
                r.workflow, r.metrics.trips_per_person_day, r.metrics.rg_km_per_person_day, r.metrics.total_trips, r.profile.total_seconds
            ));
        }
        s
    }
}

/// Runs every spec on `corpus` and scores each on the shared cohort.
pub fn compare_workflows(specs: &[WorkflowSpec], corpus: &Corpus, cfg: &ExecConfig) -> Result<ComparisonReport, PipelineError> {
    let (report, _) = compare_workflows_with_runs(specs, corpus, cfg)?;
    Ok(report)
}

/// As [`compare_workflows`], also returning the runs.
pub fn compare_workflows_with_runs(
    specs: &[WorkflowSpec],
    corpus: &Corpus,
    cfg: &ExecConfig,
) -> Result<(ComparisonReport, Vec<WorkflowRun>), PipelineError> {
    if specs.len() < 2 {
        return Err(PipelineError::Usage(format!(
            "comparison needs at least 2 workflows, got {}",
            specs.len()
        )));
    }
    let runs = specs
        .iter()
        .map(|s| execute_workflow(s, corpus, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let by_user: Vec<_> = runs.iter().map(WorkflowRun::stays_by_user).collect();
    let cohort = Cohort::with_stays_in_all(&by_user);
    let cohort_users = match &cohort {
        Cohort::Users(u) => u.len(),
        Cohort::All => unreachable!("intersection cohorts are explicit"),
    };
    let rows = runs
        .iter()
        .map(|r| {
            Ok(ComparisonRow {
                workflow: r.name.clone(),
                metrics: r.metrics(&cohort, cfg.utc_offset_s)?,
                profile: r.profile.clone(),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((ComparisonReport { cohort_users, rows }, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub label: String,
    pub input_bytes: u64,
    pub input_rows: usize,
    /// Median wall-clock seconds over the repeats.
    pub seconds: f64,
}

/// Least-squares line of seconds against megabytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope_s_per_mb: f64,
    pub intercept_s: f64,
    /// `None` when undefined (no spread in sizes or in times).
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub workflow: String,
    pub points: Vec<ScalingPoint>,
    pub fit: LinearFit,
    pub degenerate: bool,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * n {
        return LinearFit {
            slope_s_per_mb: 0.0,
            intercept_s: my,
            r_squared: None,
        };
    }
    let slope = sxy / sxx;
    LinearFit {
        slope_s_per_mb: slope,
        intercept_s: my - slope * mx,
        r_squared: (syy > 0.0).then(|| (sxy * sxy) / (sxx * syy)),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Times `spec` on each labelled corpus and fits time against size.
pub fn scaling_probe(
    spec: &WorkflowSpec,
    corpora: &[(String, Corpus)],
    cfg: &ExecConfig,
    repeats: usize,
) -> Result<ScalingReport, PipelineError> {
    if corpora.len() < 3 {
        return Err(PipelineError::Usage(format!(
            "scaling probe needs at least 3 sizes, got {}",
            corpora.len()
        )));
    }
    let cfg = ExecConfig {
        memory_sample_interval: None,
        ..cfg.clone()
    };
    let mut points = Vec::new();
    for (label, corpus) in corpora {
        let mut times = Vec::new();
        let mut rows = 0;
        for _ in 0..repeats.max(1) {
            let run = execute_workflow(spec, corpus, &cfg)?;
            times.push(run.profile.total_seconds);
            rows = run.profile.input_rows;
        }
        points.push(ScalingPoint {
            label: label.clone(),
            input_bytes: corpus.input_bytes,
            input_rows: rows,
            seconds: median(times),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.input_bytes as f64 / 1e6).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.seconds).collect();
    let fit = linear_fit(&xs, &ys);
    Ok(ScalingReport {
        workflow: spec.name.clone(),
        points,
        degenerate: fit.r_squared.is_none(),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]);
        assert_relative_eq!(f.slope_s_per_mb, 2.0);
        assert_relative_eq!(f.intercept_s, 1.0);
        assert_relative_eq!(f.r_squared.unwrap(), 1.0);
    }

    #[test]
    fn degenerate_fits() {
        let f = linear_fit(&[0.0, 0.0, 0.0], &[0.001, 0.002, 0.0015]);
        assert_eq!(f.r_squared, None);
        assert_relative_eq!(f.intercept_s, 0.0015);
        assert_eq!(linear_fit(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).r_squared, None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }

    fn quiet() -> ExecConfig {
        ExecConfig {
            memory_sample_interval: None,
            ..Default::default()
        }
    }

    fn synth() -> Corpus {
        use crate::io::{generate_synthetic, SynthConfig};
        let cfg = SynthConfig {
            users: 4,
            days: 2,
            ..Default::default()
        };
        generate_synthetic(&cfg).unwrap().corpus()
    }

    #[test]
    fn comparison_needs_two_specs() {
        let w1 = crate::pipeline::preset("workflow1").unwrap();
        let err = compare_workflows(&[w1], &synth(), &quiet()).unwrap_err();
        assert!(matches!(err, PipelineError::Usage(_)));
    }

    #[test]
    fn identical_specs_give_identical_rows() {
        let w6 = crate::pipeline::preset("workflow6").unwrap();
        let report = compare_workflows(&[w6.clone(), w6], &synth(), &quiet()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].metrics, report.rows[1].metrics);
        assert!(report.cohort_users > 0);
        assert!(report.table().contains("workflow6"));
    }

    #[test]
    fn probe_needs_three_sizes() {
        let w6 = crate::pipeline::preset("workflow6").unwrap();
        let one = vec![("1x".to_string(), synth())];
        assert!(matches!(scaling_probe(&w6, &one, &quiet(), 1), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn zero_byte_corpora_are_degenerate() {
        let w6 = crate::pipeline::preset("workflow6").unwrap();
        let empty: Vec<_> = ["1x", "2x", "4x"]
            .iter()
            .map(|l| (l.to_string(), Corpus::from_records(Vec::new(), 0)))
            .collect();
        let report = scaling_probe(&w6, &empty, &quiet(), 3).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.fit.r_squared, None);
        assert!(report.fit.intercept_s < 0.1);
    }
}
