//! Static type rules for stage orderings.
//!
//! A chain of stages carries one stream per user. Stays exist after the first
//! record-level clustering stage (trace segmentation, or incremental
//! clustering on records) or after a stay integrator.

use std::fmt;

use serde::Serialize;

use super::locate::Seg;
use super::spec::{change_point_problem, path_string, ClusterMode, IncrementalParams, InputStream, StageSpec, WorkflowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub severity: Severity,
    /// Stage path such as `stages[0].gps[1]`, when the problem has one.
    pub stage: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.stage {
            Some(s) => write!(f, "{sev}[{}] {s}: {}", self.code, self.message),
            None => write!(f, "{sev}[{}]: {}", self.code, self.message),
        }
    }
}

/// Codes:
/// - E001 stay duration calculator with no upstream stay producer
/// - E002 stay integrator not fed by two stay-producing branches
/// - E003 stay-mode incremental clustering with no upstream stay producer
/// - E004 record-level clustering after stays already exist
/// - E005 input selector does not match the presence of an integrator
/// - E006 stay integrator not the first stage
/// - E007 stay integrator nested inside a branch
/// - E008 change point missing, non-positive or out of range
/// - E009 empty stage list
/// - W001 oscillation corrector runs first, on raw records
/// - W002 workflow never produces stays
pub fn validate_workflow(spec: &WorkflowSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if spec.stages.is_empty() {
        out.push(error("E009", None, "workflow has no stages".into()));
        return out;
    }
    let root = [Seg::Key("stages".into())];
    if let Some((path, message)) = change_point_problem(&spec.stages, spec.allow_out_of_range, &root) {
        out.push(error("E008", Some(path_string(&path)), message));
    }
    let has_integrator = matches!(spec.stages[0], StageSpec::StayIntegrator(_));
    match (spec.input, has_integrator) {
        (InputStream::Both, false) => out.push(error(
            "E005",
            None,
            "input `both` needs a stay integrator as the first stage".into(),
        )),
        (InputStream::Gps | InputStream::Cellular, true) => out.push(error(
            "E005",
            Some("stages[0]".into()),
            "a stay integrator needs input `both`".into(),
        )),
        _ => {}
    }
    if !check_chain(&spec.stages, "stages", false, false, &mut out) {
        out.push(warning("W002", None, "workflow never produces stays".into()));
    }
    out
}

/// Walks one chain; returns whether stays exist at its end.
fn check_chain(stages: &[StageSpec], prefix: &str, in_branch: bool, mut has_stays: bool, out: &mut Vec<Diagnostic>) -> bool {
    for (i, stage) in stages.iter().enumerate() {
        let at = || Some(format!("{prefix}[{i}]"));
        match stage {
            StageSpec::TraceSegmentation(_)
            | StageSpec::IncrementalClustering(IncrementalParams {
                mode: ClusterMode::Records,
                ..
            }) => {
                if has_stays {
                    out.push(error(
                        "E004",
                        at(),
                        format!("{} re-clusters raw records and would discard upstream stays", stage.name()),
                    ));
                }
                has_stays = true;
            }
            StageSpec::IncrementalClustering(_) => {
                if !has_stays {
                    out.push(error(
                        "E003",
                        at(),
                        "incremental clustering on stays needs an upstream stay producer".into(),
                    ));
                }
            }
            StageSpec::StayDuration(_) => {
                if !has_stays {
                    out.push(error(
                        "E001",
                        at(),
                        "stay duration calculator needs an upstream stay producer".into(),
                    ));
                }
            }
            StageSpec::OscillationCorrector(_) => {
                if i == 0 && !in_branch && !has_stays {
                    out.push(warning(
                        "W001",
                        at(),
                        "oscillation corrector runs first and rewrites raw records (pre-processing)".into(),
                    ));
                }
            }
            StageSpec::StayIntegrator(p) => {
                if in_branch {
                    out.push(error("E007", at(), "stay integrators cannot be nested".into()));
                } else if i != 0 {
                    out.push(error(
                        "E006",
                        at(),
                        "the stay integrator consumes both raw streams and must come first".into(),
                    ));
                }
                for (branch, list) in [("gps", &p.gps), ("cellular", &p.cellular)] {
                    let path = format!("{prefix}[{i}].{branch}");
                    let mut inner = Vec::new();
                    let produces = check_chain(list, &path, true, false, &mut inner);
                    out.extend(inner);
                    if !produces {
                        out.push(error(
                            "E002",
                            Some(path),
                            format!("the integrator's {branch} branch does not produce a stay stream"),
                        ));
                    }
                }
                has_stays = true;
            }
        }
    }
    has_stays
}

fn error(code: &'static str, stage: Option<String>, message: String) -> Diagnostic {
    Diagnostic {
        code,
        severity: Severity::Error,
        stage,
        message,
    }
}

fn warning(code: &'static str, stage: Option<String>, message: String) -> Diagnostic {
    Diagnostic {
        code,
        severity: Severity::Warning,
        stage,
        message,
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::IntegrationRules;
    use crate::pipeline::spec::{preset, IntegratorParams, PRESET_NAMES};

    fn spec(input: InputStream, stages: Vec<StageSpec>) -> WorkflowSpec {
        WorkflowSpec {
            name: "t".into(),
            input,
            stages,
            allow_out_of_range: false,
        }
    }

    fn codes(s: &WorkflowSpec) -> Vec<&'static str> {
        validate_workflow(s).iter().map(|d| d.code).collect()
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            let d = validate_workflow(&preset(name).unwrap());
            assert!(!has_errors(&d), "{name}: {d:?}");
        }
        assert_eq!(codes(&preset("workflow3").unwrap()), ["W001"]);
        assert!(codes(&preset("workflow2").unwrap()).is_empty());
    }

    #[test]
    fn duration_alone_is_e001() {
        assert_eq!(codes(&spec(InputStream::Gps, vec![StageSpec::sdc(5.0)])), ["E001", "W002"]);
    }

    #[test]
    fn integrator_with_one_stream_is_e002() {
        let s = spec(
            InputStream::Both,
            vec![StageSpec::StayIntegrator(IntegratorParams {
                duration_min: 5.0,
                osc_window_min: 5.0,
                rules: IntegrationRules::default(),
                gps: vec![StageSpec::ts(5.0, 0.2)],
                cellular: vec![],
            })],
        );
        let d = validate_workflow(&s);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "E002");
        assert_eq!(d[0].stage.as_deref(), Some("stages[0].cellular"));
    }

    #[test]
    fn ordering_rules() {
        assert_eq!(codes(&spec(InputStream::Gps, vec![StageSpec::ic_stays(5.0, 0.2)])), ["E003", "W002"]);
        assert_eq!(
            codes(&spec(InputStream::Gps, vec![StageSpec::ts(5.0, 0.2), StageSpec::ic_records(0.2)])),
            ["E004"]
        );
        let mut late = preset("workflow5").unwrap();
        late.input = InputStream::Both;
        late.stages.push(preset("integration").unwrap().stages[0].clone());
        let c = codes(&late);
        assert!(c.contains(&"E005") && c.contains(&"E006"), "{c:?}");
        let mut wrong_input = preset("integration").unwrap();
        wrong_input.input = InputStream::Gps;
        assert_eq!(codes(&wrong_input), ["E005"]);
        assert_eq!(codes(&spec(InputStream::Gps, vec![])), ["E009"]);
    }

    #[test]
    fn change_points_are_checked() {
        let mut s = preset("workflow5").unwrap();
        s.stages[1] = StageSpec::sdc(45.0);
        let d = validate_workflow(&s);
        assert_eq!(d[0].code, "E008");
        assert_eq!(d[0].stage.as_deref(), Some("stages[1].params.duration_min"));
        s.allow_out_of_range = true;
        assert!(validate_workflow(&s).is_empty());
        s.stages[1] = StageSpec::sdc(0.0);
        assert_eq!(codes(&s), ["E008"]);
    }
}
