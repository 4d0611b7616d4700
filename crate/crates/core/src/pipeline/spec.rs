//! Workflow specifications, presets and the JSON config format.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::integrator::IntegrationRules;
use crate::model::{check_distance, check_duration, check_window, ModelError};

use super::locate::{locate_line, Seg};

/// Which record stream a workflow consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputStream {
    Gps,
    Cellular,
    /// Both streams, fed to a stay integrator.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    #[default]
    Records,
    Stays,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationParams {
    pub duration_min: f64,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementalParams {
    #[serde(default)]
    pub mode: ClusterMode,
    pub distance_km: f64,
    /// Required in stay mode, where it filters stays before clustering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationParams {
    pub duration_min: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillationParams {
    pub osc_window_min: f64,
    /// On stays: fuse consecutive stays that correction moved onto one location.
    #[serde(default = "yes")]
    pub merge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorParams {
    pub duration_min: f64,
    pub osc_window_min: f64,
    #[serde(default)]
    pub rules: IntegrationRules,
    pub gps: Vec<StageSpec>,
    pub cellular: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum StageSpec {
    #[serde(alias = "TRACE_SEG")]
    TraceSegmentation(SegmentationParams),
    #[serde(alias = "INCREMENTAL")]
    IncrementalClustering(IncrementalParams),
    #[serde(alias = "STAY_DURATION")]
    StayDuration(DurationParams),
    #[serde(alias = "OSC_CORRECTOR")]
    OscillationCorrector(OscillationParams),
    #[serde(alias = "STAY_INTEGRATOR")]
    StayIntegrator(IntegratorParams),
}

impl StageSpec {
    pub fn name(&self) -> &'static str {
        match self {
            StageSpec::TraceSegmentation(_) => "trace_segmentation",
            StageSpec::IncrementalClustering(p) => match p.mode {
                ClusterMode::Records => "incremental_clustering",
                ClusterMode::Stays => "incremental_clustering_stays",
            },
            StageSpec::StayDuration(_) => "stay_duration",
            StageSpec::OscillationCorrector(_) => "oscillation_corrector",
            StageSpec::StayIntegrator(_) => "stay_integrator",
        }
    }

    pub fn ts(duration_min: f64, distance_km: f64) -> Self {
        StageSpec::TraceSegmentation(SegmentationParams {
            duration_min,
            distance_km,
        })
    }

    pub fn ic_records(distance_km: f64) -> Self {
        StageSpec::IncrementalClustering(IncrementalParams {
            mode: ClusterMode::Records,
            distance_km,
            duration_min: None,
        })
    }

    pub fn ic_stays(duration_min: f64, distance_km: f64) -> Self {
        StageSpec::IncrementalClustering(IncrementalParams {
            mode: ClusterMode::Stays,
            distance_km,
            duration_min: Some(duration_min),
        })
    }

    pub fn sdc(duration_min: f64) -> Self {
        StageSpec::StayDuration(DurationParams { duration_min })
    }

    pub fn osc(osc_window_min: f64) -> Self {
        StageSpec::OscillationCorrector(OscillationParams {
            osc_window_min,
            merge: true,
        })
    }

    /// Every change point this stage binds, with its field name. Integrator
    /// branches are not included.
    pub fn change_points(&self) -> Vec<(&'static str, Option<f64>)> {
        match self {
            StageSpec::TraceSegmentation(p) => {
                vec![("duration_min", Some(p.duration_min)), ("distance_km", Some(p.distance_km))]
            }
            StageSpec::IncrementalClustering(p) => {
                let mut v = vec![("distance_km", Some(p.distance_km))];
                if p.mode == ClusterMode::Stays || p.duration_min.is_some() {
                    v.push(("duration_min", p.duration_min));
                }
                v
            }
            StageSpec::StayDuration(p) => vec![("duration_min", Some(p.duration_min))],
            StageSpec::OscillationCorrector(p) => vec![("osc_window_min", Some(p.osc_window_min))],
            StageSpec::StayIntegrator(p) => {
                vec![("duration_min", Some(p.duration_min)), ("osc_window_min", Some(p.osc_window_min))]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub name: String,
    pub input: InputStream,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_out_of_range: bool,
}

/// Command-line replacements applied to every stage binding the value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub duration_min: Option<f64>,
    pub distance_km: Option<f64>,
    pub osc_window_min: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.duration_min.is_none() && self.distance_km.is_none() && self.osc_window_min.is_none()
    }
}

fn apply_overrides(stages: &mut [StageSpec], o: &Overrides) {
    for stage in stages {
        match stage {
            StageSpec::TraceSegmentation(p) => {
                p.duration_min = o.duration_min.unwrap_or(p.duration_min);
                p.distance_km = o.distance_km.unwrap_or(p.distance_km);
            }
            StageSpec::IncrementalClustering(p) => {
                p.distance_km = o.distance_km.unwrap_or(p.distance_km);
                if p.mode == ClusterMode::Stays || p.duration_min.is_some() {
                    p.duration_min = o.duration_min.or(p.duration_min);
                }
            }
            StageSpec::StayDuration(p) => p.duration_min = o.duration_min.unwrap_or(p.duration_min),
            StageSpec::OscillationCorrector(p) => {
                p.osc_window_min = o.osc_window_min.unwrap_or(p.osc_window_min)
            }
            StageSpec::StayIntegrator(p) => {
                p.duration_min = o.duration_min.unwrap_or(p.duration_min);
                p.osc_window_min = o.osc_window_min.unwrap_or(p.osc_window_min);
                apply_overrides(&mut p.gps, o);
                apply_overrides(&mut p.cellular, o);
            }
        }
    }
}

impl WorkflowSpec {
    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        apply_overrides(&mut self.stages, o);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workflow specs always serialize")
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "workflow1",
    "workflow2",
    "workflow3",
    "workflow4",
    "workflow5",
    "workflow6",
    "integration",
];

/// Cellular workflows default to 1 km / 5 min / 5 min window; GPS workflows
/// to 0.2 km / 5 min, the middle of the tested grids.
pub fn preset(name: &str) -> Option<WorkflowSpec> {
    let name = name.strip_prefix("preset:").unwrap_or(name);
    let (input, stages) = match name {
        "workflow1" => (InputStream::Cellular, vec![StageSpec::ic_records(1.0), StageSpec::sdc(5.0)]),
        "workflow2" => (
            InputStream::Cellular,
            vec![
                StageSpec::ic_records(1.0),
                StageSpec::sdc(5.0),
                StageSpec::osc(5.0),
                StageSpec::sdc(5.0),
            ],
        ),
        "workflow3" => (
            InputStream::Cellular,
            vec![StageSpec::osc(5.0), StageSpec::ic_records(1.0), StageSpec::sdc(5.0)],
        ),
        "workflow4" => (InputStream::Gps, vec![StageSpec::ic_records(0.2), StageSpec::sdc(5.0)]),
        "workflow5" => (InputStream::Gps, vec![StageSpec::ts(5.0, 0.2), StageSpec::sdc(5.0)]),
        "workflow6" => (
            InputStream::Gps,
            vec![StageSpec::ts(5.0, 0.2), StageSpec::ic_stays(5.0, 0.2), StageSpec::sdc(5.0)],
        ),
        "integration" => {
            let gps = preset("workflow6")?.stages;
            let cellular = preset("workflow2")?.stages;
            (
                InputStream::Both,
                vec![StageSpec::StayIntegrator(IntegratorParams {
                    duration_min: 5.0,
                    osc_window_min: 5.0,
                    rules: IntegrationRules::default(),
                    gps,
                    cellular,
                })],
            )
        }
        _ => return None,
    };
    Some(WorkflowSpec {
        name: name.to_string(),
        input,
        stages,
        allow_out_of_range: false,
    })
}

/// Where in a config document a problem was found.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.field) {
            (Some(l), Some(p)) => write!(f, "line {l}, field `{p}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(p)) => write!(f, "field `{p}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

pub(crate) fn path_string(path: &[Seg]) -> String {
    let mut s = String::new();
    for seg in path {
        match seg {
            Seg::Key(k) => {
                if !s.is_empty() {
                    s.push('.');
                }
                s.push_str(k);
            }
            Seg::Index(i) => s.push_str(&format!("[{i}]")),
        }
    }
    s
}

fn check_value(name: &str, value: f64, allow: bool) -> Result<(), ModelError> {
    match name {
        "duration_min" => check_duration(value, allow),
        "distance_km" => check_distance(value, allow),
        _ => check_window(value, allow),
    }
}

/// First change-point problem in `stages`, as (path, message).
pub(crate) fn change_point_problem(
    stages: &[StageSpec],
    allow: bool,
    prefix: &[Seg],
) -> Option<(Vec<Seg>, String)> {
    for (i, stage) in stages.iter().enumerate() {
        let mut at = prefix.to_vec();
        at.push(Seg::Index(i));
        at.push(Seg::Key("params".into()));
        for (name, value) in stage.change_points() {
            let mut field = at.clone();
            field.push(Seg::Key(name.into()));
            match value {
                None => return Some((field, format!("missing change point `{name}`"))),
                Some(v) => {
                    if let Err(e) = check_value(name, v, allow) {
                        return Some((field, e.to_string()));
                    }
                }
            }
        }
        if let StageSpec::StayIntegrator(p) = stage {
            for (branch, list) in [("gps", &p.gps), ("cellular", &p.cellular)] {
                let mut b = at.clone();
                b.push(Seg::Key(branch.into()));
                if let Some(found) = change_point_problem(list, allow, &b) {
                    return Some(found);
                }
            }
        }
    }
    None
}

/// Parses a preset name (`preset:workflow3` or `workflow3`) or a JSON config.
pub fn parse_workflow(text: &str) -> Result<WorkflowSpec, ParseError> {
    let trimmed = text.trim();
    if !trimmed.starts_with('{') {
        return preset(trimmed).ok_or_else(|| ParseError {
            line: None,
            field: None,
            message: format!(
                "unknown preset `{trimmed}` (known: {})",
                PRESET_NAMES.map(|n| format!("preset:{n}")).join(", ")
            ),
        });
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let spec: WorkflowSpec = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ParseError {
            line: Some(inner.line()),
            field: (path != ".").then_some(path),
            message: strip_position(&inner.to_string()),
        }
    })?;
    de.end().map_err(|e| ParseError {
        line: Some(e.line()),
        field: None,
        message: strip_position(&e.to_string()),
    })?;
    let root = [Seg::Key("stages".into())];
    if let Some((path, message)) = change_point_problem(&spec.stages, spec.allow_out_of_range, &root) {
        return Err(ParseError {
            line: locate_line(text, &path),
            field: Some(path_string(&path)),
            message,
        });
    }
    Ok(spec)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_tables() {
        let names = |n: &str| -> Vec<&'static str> { preset(n).unwrap().stages.iter().map(|s| s.name()).collect() };
        assert_eq!(names("workflow1"), ["incremental_clustering", "stay_duration"]);
        assert_eq!(
            names("preset:workflow2"),
            ["incremental_clustering", "stay_duration", "oscillation_corrector", "stay_duration"]
        );
        assert_eq!(names("workflow3"), ["oscillation_corrector", "incremental_clustering", "stay_duration"]);
        assert_eq!(names("workflow4"), ["incremental_clustering", "stay_duration"]);
        assert_eq!(names("workflow5"), ["trace_segmentation", "stay_duration"]);
        assert_eq!(
            names("workflow6"),
            ["trace_segmentation", "incremental_clustering_stays", "stay_duration"]
        );
        assert_eq!(names("integration"), ["stay_integrator"]);
        assert_eq!(preset("workflow1").unwrap().input, InputStream::Cellular);
        assert_eq!(preset("workflow4").unwrap().input, InputStream::Gps);
        assert!(preset("workflow7").is_none());
    }

    #[test]
    fn preset_by_name() {
        assert_eq!(parse_workflow("workflow2").unwrap(), preset("workflow2").unwrap());
        assert_eq!(parse_workflow(" preset:workflow6\n").unwrap(), preset("workflow6").unwrap());
        assert!(parse_workflow("preset:nope").unwrap_err().message.contains("unknown preset"));
    }

    #[test]
    fn json_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            assert_eq!(parse_workflow(&spec.to_json()).unwrap(), spec, "{name}");
        }
    }

    #[test]
    fn spec_kind_aliases() {
        let text = r#"{"name": "x", "input": "gps", "stages": [
            {"kind": "TRACE_SEG", "params": {"duration_min": 5, "distance_km": 0.2}},
            {"kind": "STAY_DURATION", "params": {"duration_min": 5}}]}"#;
        assert_eq!(parse_workflow(text).unwrap().stages, preset("workflow5").unwrap().stages);
    }

    #[test]
    fn negative_duration_names_line_and_field() {
        let text = "{\n  \"name\": \"bad\",\n  \"input\": \"gps\",\n  \"stages\": [\n    {\"kind\": \"trace_segmentation\",\n     \"params\": {\"distance_km\": 0.2,\n                \"duration_min\": -1}}\n  ]\n}";
        let e = parse_workflow(text).unwrap_err();
        assert_eq!(e.line, Some(7));
        assert_eq!(e.field.as_deref(), Some("stages[0].params.duration_min"));
        assert!(e.message.contains("positive"), "{e}");
    }

    #[test]
    fn out_of_range_needs_override() {
        let make = |allow: bool| {
            format!(
                r#"{{"name": "x", "input": "gps", "allow_out_of_range": {allow}, "stages": [
                {{"kind": "incremental_clustering", "params": {{"distance_km": 2.5}}}},
                {{"kind": "stay_duration", "params": {{"duration_min": 5}}}}]}}"#
            )
        };
        let e = parse_workflow(&make(false)).unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.field.as_deref(), Some("stages[0].params.distance_km"));
        assert!(parse_workflow(&make(true)).is_ok());
    }

    #[test]
    fn unknown_kind_and_missing_field() {
        let e = parse_workflow(
            "{\"name\": \"x\", \"input\": \"gps\",\n \"stages\": [{\"kind\": \"teleport\", \"params\": {}}]}",
        )
        .unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("unknown variant"), "{e}");

        let e = parse_workflow(
            "{\"name\": \"x\", \"input\": \"gps\",\n \"stages\": [\n{\"kind\": \"stay_duration\", \"params\": {}}]}",
        )
        .unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("duration_min"), "{e}");
    }

    #[test]
    fn stay_mode_requires_duration() {
        let text = r#"{"name": "x", "input": "gps", "stages": [
            {"kind": "trace_segmentation", "params": {"duration_min": 5, "distance_km": 0.2}},
            {"kind": "incremental_clustering", "params": {"mode": "stays", "distance_km": 0.2}}]}"#;
        let e = parse_workflow(text).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("stages[1].params.duration_min"));
        assert!(e.message.contains("missing change point"));
    }

    #[test]
    fn overrides_reach_branches() {
        let o = Overrides {
            duration_min: Some(10.0),
            distance_km: Some(0.5),
            osc_window_min: None,
        };
        let spec = preset("integration").unwrap().with_overrides(&o);
        let StageSpec::StayIntegrator(p) = &spec.stages[0] else { panic!() };
        assert_eq!(p.duration_min, 10.0);
        assert_eq!(p.osc_window_min, 5.0);
        assert_eq!(p.gps[0], StageSpec::ts(10.0, 0.5));
        assert_eq!(p.cellular[0], StageSpec::ic_records(0.5));
        assert_eq!(preset("workflow1").unwrap().with_overrides(&o).stages[0], StageSpec::ic_records(0.5));
    }
}
