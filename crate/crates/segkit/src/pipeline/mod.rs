//! Config-driven pipeline: validates a declarative TOML file, loads or
//! generates the input data, runs the requested analyses in dependency
//! order (independent stages concurrently), and writes JSON results, tidy
//! CSV tables and SVG plots per stage.
//!
//! Stage outputs are written atomically (temp file + rename). With a fixed
//! config and input, CSV and JSON outputs are byte-identical across runs;
//! SVG files embed a generation timestamp unless the run is deterministic.

mod stages;
pub mod svg;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::frame::{ColumnKind, Frame, Schema};
use crate::rng::StreamRng;
use crate::segregation::{Gender, SectorPanel};
use crate::synthgen::{calibrate_to_paper, generate, DgpSpec, GroundTruth};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("analysis {stage:?} failed: {message}")]
    AnalysisFailed { stage: String, message: String },
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

pub const VALID_ANALYSES: [&str; 8] = [
    "segregation",
    "shiftshare",
    "participation_probit",
    "lasso_select",
    "psm",
    "mincer",
    "kbo",
    "counterfactual",
];

/// Columns emitted by the synthetic generator, used to validate formulas
/// when the input is synthesized.
pub const SYNTH_COLUMNS: [(&str, ColumnKind); 23] = [
    ("period", ColumnKind::Categorical),
    ("sector", ColumnKind::Categorical),
    ("female", ColumnKind::Boolean),
    ("age", ColumnKind::Numeric),
    ("nationality", ColumnKind::Categorical),
    ("education", ColumnKind::Categorical),
    ("yrseduc", ColumnKind::Numeric),
    ("experience", ColumnKind::Numeric),
    ("incouple", ColumnKind::Boolean),
    ("kids", ColumnKind::Boolean),
    ("training", ColumnKind::Boolean),
    ("public", ColumnKind::Boolean),
    ("benefit", ColumnKind::Boolean),
    ("occupation", ColumnKind::Categorical),
    ("in_lf", ColumnKind::Boolean),
    ("employed", ColumnKind::Boolean),
    ("parttime", ColumnKind::Boolean),
    ("hours", ColumnKind::Numeric),
    ("ln_hours", ColumnKind::Numeric),
    ("ln_wage", ColumnKind::Numeric),
    ("remote", ColumnKind::Boolean),
    ("fd_sector", ColumnKind::Boolean),
    ("low_seg", ColumnKind::Boolean),
];

#[derive(Debug, Clone, Deserialize)]
pub struct InputConfig {
    /// "microdata" | "panel" | "synth".
    pub kind: String,
    pub path: Option<String>,
    /// External generator spec (TOML) for synth inputs.
    pub spec_path: Option<String>,
    /// "paper" selects the shipped calibrated spec.
    pub preset: Option<String>,
    pub n_workers: Option<usize>,
    pub n_periods: Option<usize>,
    /// Columns used to derive the employment panel from microdata.
    pub period_column: Option<String>,
    pub sector_column: Option<String>,
    pub female_column: Option<String>,
    pub employed_column: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnalysisConfig {
    pub kind: String,
    pub name: Option<String>,
    /// Explicit ordering edges: run after these stages.
    #[serde(default)]
    pub after: Vec<String>,

    // model formula
    pub response: Option<String>,
    #[serde(default)]
    pub terms: Vec<String>,
    pub intercept: Option<bool>,
    #[serde(default)]
    pub reference_levels: BTreeMap<String, String>,

    // segregation
    pub pooling: Option<String>,
    pub split: Option<String>,
    #[serde(default)]
    pub high_sectors: Vec<String>,

    // shiftshare
    pub gender: Option<String>,
    pub base_time: Option<String>,

    // lasso
    pub grid_size: Option<usize>,

    // psm
    pub treatment: Option<String>,
    #[serde(default)]
    pub outcomes: Vec<String>,
    pub neighbors: Option<usize>,
    pub common_support: Option<bool>,
    #[serde(default)]
    pub samples: Vec<String>,

    // shared grouping columns
    pub gender_column: Option<String>,
    pub dominance_column: Option<String>,

    // kbo
    pub period: Option<String>,
    pub group: Option<String>,
    pub within: Option<String>,

    // counterfactual
    pub mincer: Option<String>,
}

impl AnalysisConfig {
    pub fn stage_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.clone())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub input: InputConfig,
    #[serde(default)]
    pub schema: BTreeMap<String, String>,
    #[serde(default, rename = "analysis")]
    pub analyses: Vec<AnalysisConfig>,
}

impl PipelineConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.as_ref().display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
    }

    fn schema(&self) -> Result<Schema, PipelineError> {
        let mut schema = Schema::new();
        for (name, kind) in &self.schema {
            let kind = match kind.as_str() {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                "boolean" => ColumnKind::Boolean,
                other => {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "schema column {name:?}: unknown kind {other:?} (use numeric, categorical or boolean)"
                    )))
                }
            };
            schema = schema.with(name, kind);
        }
        Ok(schema)
    }

    /// Column names available to formulas for this input.
    fn available_columns(&self) -> Option<HashSet<String>> {
        match self.input.kind.as_str() {
            "microdata" => Some(self.schema.keys().cloned().collect()),
            "synth" if self.input.spec_path.is_none() => {
                Some(SYNTH_COLUMNS.iter().map(|(n, _)| n.to_string()).collect())
            }
            // external generator specs still emit the standard roster
            "synth" => Some(SYNTH_COLUMNS.iter().map(|(n, _)| n.to_string()).collect()),
            _ => None, // panel input: no frame columns
        }
    }
}

/// Columns an analysis reads from the frame.
fn referenced_columns(analysis: &AnalysisConfig) -> Vec<String> {
    let mut cols = Vec::new();
    if let Some(r) = &analysis.response {
        cols.push(r.clone());
    }
    for term in &analysis.terms {
        for var in crate::frame::Term::parse(term).variables() {
            cols.push(var.to_string());
        }
    }
    for opt in [
        &analysis.treatment,
        &analysis.gender_column,
        &analysis.dominance_column,
        &analysis.period,
        &analysis.group,
        &analysis.within,
    ]
    .into_iter()
    .flatten()
    {
        cols.push(opt.clone());
    }
    cols.extend(analysis.outcomes.iter().cloned());
    cols
}

fn needs_frame(kind: &str) -> bool {
    !matches!(kind, "segregation" | "shiftshare")
}

/// Validate the config: known analysis kinds, unique names, resolvable
/// column and stage references, and an acyclic ordering. Returns the
/// execution order as indexes into `analyses`.
pub fn validate(config: &PipelineConfig) -> Result<Vec<usize>, PipelineError> {
    match config.input.kind.as_str() {
        "microdata" => {
            if config.input.path.is_none() {
                return Err(PipelineError::ConfigInvalid(
                    "microdata input requires `path`".into(),
                ));
            }
            if config.schema.is_empty() {
                return Err(PipelineError::ConfigInvalid(
                    "microdata input requires a [schema] table".into(),
                ));
            }
            config.schema()?;
        }
        "panel" => {
            if config.input.path.is_none() {
                return Err(PipelineError::ConfigInvalid("panel input requires `path`".into()));
            }
        }
        "synth" => {
            if config.input.spec_path.is_none()
                && config.input.preset.as_deref() != Some("paper")
            {
                return Err(PipelineError::ConfigInvalid(
                    "synth input requires `spec_path` or `preset = \"paper\"`".into(),
                ));
            }
        }
        other => {
            return Err(PipelineError::ConfigInvalid(format!(
                "unknown input kind {other:?} (use microdata, panel or synth)"
            )))
        }
    }

    if config.analyses.is_empty() {
        return Err(PipelineError::ConfigInvalid("no analyses configured".into()));
    }

    let mut names = HashSet::new();
    for analysis in &config.analyses {
        if !VALID_ANALYSES.contains(&analysis.kind.as_str()) {
            return Err(PipelineError::ConfigInvalid(format!(
                "unknown analysis kind {:?}; valid kinds: {}",
                analysis.kind,
                VALID_ANALYSES.join(", ")
            )));
        }
        let name = analysis.stage_name();
        if !names.insert(name.clone()) {
            return Err(PipelineError::ConfigInvalid(format!("duplicate stage name {name:?}")));
        }
    }

    let available = config.available_columns();
    for analysis in &config.analyses {
        if needs_frame(&analysis.kind) && available.is_none() {
            return Err(PipelineError::ConfigInvalid(format!(
                "analysis {:?} needs microdata but the input is a panel",
                analysis.stage_name()
            )));
        }
        if let Some(available) = &available {
            for col in referenced_columns(analysis) {
                if !available.contains(&col) {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "analysis {:?} references column {col:?} absent from the input schema",
                        analysis.stage_name()
                    )));
                }
            }
        }
        match analysis.kind.as_str() {
            "participation_probit" | "lasso_select" | "mincer" | "kbo" => {
                if analysis.response.is_none() || analysis.terms.is_empty() {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "analysis {:?} requires `response` and `terms`",
                        analysis.stage_name()
                    )));
                }
            }
            "psm" => {
                if analysis.treatment.is_none()
                    || analysis.terms.is_empty()
                    || analysis.outcomes.is_empty()
                {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "analysis {:?} requires `treatment`, `terms` and `outcomes`",
                        analysis.stage_name()
                    )));
                }
            }
            "counterfactual" => {
                let target = analysis.mincer.as_deref().ok_or_else(|| {
                    PipelineError::ConfigInvalid(format!(
                        "analysis {:?} requires `mincer = <stage name>`",
                        analysis.stage_name()
                    ))
                })?;
                let found = config
                    .analyses
                    .iter()
                    .any(|a| a.kind == "mincer" && a.stage_name() == target);
                if !found {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "analysis {:?} references mincer stage {target:?} which is not configured",
                        analysis.stage_name()
                    )));
                }
            }
            _ => {}
        }
    }

    // dependency order: explicit `after` edges plus the implicit
    // counterfactual -> mincer edge
    let index_of: HashMap<String, usize> = config
        .analyses
        .iter()
        .enumerate()
        .map(|(i, a)| (a.stage_name(), i))
        .collect();
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); config.analyses.len()];
    let mut indegree = vec![0usize; config.analyses.len()];
    for (i, analysis) in config.analyses.iter().enumerate() {
        let mut deps = analysis.after.clone();
        if analysis.kind == "counterfactual" {
            deps.push(analysis.mincer.clone().unwrap());
        }
        for dep in deps {
            let &j = index_of.get(&dep).ok_or_else(|| {
                PipelineError::ConfigInvalid(format!(
                    "analysis {:?} waits on unknown stage {dep:?}",
                    analysis.stage_name()
                ))
            })?;
            edges[j].push(i);
            indegree[i] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..config.analyses.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(config.analyses.len());
    while let Some(i) = ready.pop() {
        order.push(i);
        for &next in &edges[i] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(next);
            }
        }
    }
    if order.len() != config.analyses.len() {
        return Err(PipelineError::ConfigInvalid(
            "analysis dependencies contain a cycle".into(),
        ));
    }
    Ok(order)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub deterministic: bool,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

pub(crate) struct LoadedInput {
    pub frame: Option<Frame>,
    pub panel: SectorPanel,
    pub truth: Option<GroundTruth>,
}

fn load_synth_spec(config: &PipelineConfig, seed: Option<u64>) -> Result<DgpSpec, PipelineError> {
    let mut spec = if let Some(path) = &config.input.spec_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{path}: {e}")))?;
        toml::from_str(&text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?
    } else {
        calibrate_to_paper()
    };
    if let Some(n) = config.input.n_workers {
        spec.n_workers = n;
    }
    if let Some(n) = config.input.n_periods {
        spec.n_periods = n;
    }
    if let Some(seed) = seed {
        // stage substream: the generator stream is derived from the run
        // seed by the stage label
        spec.seed = StreamRng::new(seed).substream("input").at(0);
    }
    Ok(spec)
}

fn load_input(config: &PipelineConfig, seed: Option<u64>) -> Result<LoadedInput, PipelineError> {
    match config.input.kind.as_str() {
        "panel" => {
            let panel = SectorPanel::read_long_csv(config.input.path.as_ref().unwrap())
                .map_err(|e| PipelineError::Io(e.to_string()))?;
            Ok(LoadedInput { frame: None, panel, truth: None })
        }
        "microdata" => {
            let schema = config.schema()?;
            let frame = Frame::read_csv(config.input.path.as_ref().unwrap(), &schema)
                .map_err(|e| PipelineError::Io(e.to_string()))?;
            let panel = panel_from_frame(config, &frame)?;
            Ok(LoadedInput { frame: Some(frame), panel, truth: None })
        }
        "synth" => {
            let spec = load_synth_spec(config, seed)?;
            let (frame, panel, truth) =
                generate(&spec).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
            Ok(LoadedInput { frame: Some(frame), panel, truth: Some(truth) })
        }
        _ => unreachable!("validated"),
    }
}

/// Count employed workers by (period, sector, gender) to build the panel.
fn panel_from_frame(config: &PipelineConfig, frame: &Frame) -> Result<SectorPanel, PipelineError> {
    let period_col = config.input.period_column.as_deref().unwrap_or("period");
    let sector_col = config.input.sector_column.as_deref().unwrap_or("sector");
    let female_col = config.input.female_column.as_deref().unwrap_or("female");
    let employed_col = config.input.employed_column.as_deref().unwrap_or("employed");

    let get = |name: &str| {
        frame.column(name).map_err(|_| {
            PipelineError::ConfigInvalid(format!(
                "panel derivation needs column {name:?} in the microdata"
            ))
        })
    };
    let period = get(period_col)?;
    let sector = get(sector_col)?;
    let female = get(female_col)?.as_numeric().map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    let employed: Option<Vec<Option<f64>>> = frame
        .column(employed_col)
        .ok()
        .and_then(|c| c.as_numeric().ok());

    let times = match &period.data {
        crate::frame::ColumnData::Categorical { levels, .. } => levels.clone(),
        _ => {
            return Err(PipelineError::ConfigInvalid(format!(
                "panel period column {period_col:?} must be categorical"
            )))
        }
    };
    let sectors = match &sector.data {
        crate::frame::ColumnData::Categorical { levels, .. } => levels.clone(),
        _ => {
            return Err(PipelineError::ConfigInvalid(format!(
                "panel sector column {sector_col:?} must be categorical"
            )))
        }
    };
    let period_codes = match &period.data {
        crate::frame::ColumnData::Categorical { codes, .. } => codes.clone(),
        _ => unreachable!(),
    };
    let sector_codes = match &sector.data {
        crate::frame::ColumnData::Categorical { codes, .. } => codes.clone(),
        _ => unreachable!(),
    };

    let mut panel = SectorPanel::new(times, sectors);
    for row in 0..frame.n_rows() {
        if let Some(flags) = &employed {
            if flags[row] != Some(1.0) {
                continue;
            }
        }
        let (Some(t), Some(j), Some(f)) = (period_codes[row], sector_codes[row], female[row])
        else {
            continue;
        };
        let gender = if f == 1.0 { Gender::F } else { Gender::M };
        panel.add_count(t as usize, j as usize, gender, 1.0);
    }
    Ok(panel)
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run every configured analysis. Returns the output directory.
pub fn run(config: &PipelineConfig, options: &RunOptions) -> Result<PathBuf, PipelineError> {
    let order = validate(config)?;

    let out_dir: PathBuf = options
        .out_dir
        .clone()
        .or_else(|| std::env::var("SEGKIT_OUT").ok().map(PathBuf::from))
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("segkit-out"));
    std::fs::create_dir_all(&out_dir)?;

    let seed = options.seed.or(config.seed);
    let input = load_input(config, seed)?;
    if let Some(truth) = &input.truth {
        let dir = out_dir.join("input");
        std::fs::create_dir_all(&dir)?;
        let json = serde_json::to_string_pretty(&truth.to_json())
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        write_atomic(&dir.join("groundtruth.json"), json.as_bytes())?;
    }

    let stamp = if options.deterministic { None } else { Some(timestamp()) };

    // stages grouped into dependency waves; stages inside a wave are
    // independent and run concurrently
    let mut depth = vec![0usize; config.analyses.len()];
    let name_to_idx: HashMap<String, usize> = config
        .analyses
        .iter()
        .enumerate()
        .map(|(i, a)| (a.stage_name(), i))
        .collect();
    for &i in &order {
        let analysis = &config.analyses[i];
        let mut deps = analysis.after.clone();
        if analysis.kind == "counterfactual" {
            deps.push(analysis.mincer.clone().unwrap());
        }
        for dep in deps {
            depth[i] = depth[i].max(depth[name_to_idx[&dep]] + 1);
        }
    }
    let max_depth = depth.iter().copied().max().unwrap_or(0);

    for wave in 0..=max_depth {
        let wave_stages: Vec<usize> =
            order.iter().copied().filter(|&i| depth[i] == wave).collect();
        let results: Vec<Result<(), PipelineError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave_stages
                .iter()
                .map(|&i| {
                    let analysis = &config.analyses[i];
                    let input_ref = &input;
                    let out_ref = &out_dir;
                    let stamp_ref = stamp.as_deref();
                    scope.spawn(move || {
                        let stage_dir = out_ref.join(analysis.stage_name());
                        std::fs::create_dir_all(&stage_dir)?;
                        stages::run_stage(config, analysis, input_ref, &stage_dir, stamp_ref)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("stage thread panicked")).collect()
        });
        for result in results {
            result?;
        }
    }
    Ok(out_dir)
}

/// Validation report: empty when the config is well formed.
pub fn validation_report(config_path: &Path) -> Result<String, PipelineError> {
    let config = PipelineConfig::from_path(config_path)?;
    validate(&config)?;
    Ok(String::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_panel_config(extra: &str) -> PipelineConfig {
        let text = format!(
            r#"
[input]
kind = "panel"
path = "panel.csv"

{extra}
"#
        );
        toml::from_str(&text).expect("config parses")
    }

    #[test]
    fn unknown_analysis_kind_lists_valid_names() {
        let config = minimal_panel_config("[[analysis]]\nkind = \"kmeans\"\n");
        match validate(&config) {
            Err(PipelineError::ConfigInvalid(msg)) => {
                assert!(msg.contains("kmeans"));
                assert!(msg.contains("segregation"));
                assert!(msg.contains("counterfactual"));
            }
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn cyclic_dependencies_are_rejected() {
        let config = minimal_panel_config(
            r#"
[[analysis]]
kind = "segregation"
name = "a"
after = ["b"]

[[analysis]]
kind = "shiftshare"
name = "b"
after = ["a"]
"#,
        );
        match validate(&config) {
            Err(PipelineError::ConfigInvalid(msg)) => assert!(msg.contains("cycle")),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn absent_column_is_named() {
        let text = r#"
[input]
kind = "microdata"
path = "data.csv"

[schema]
y = "numeric"
x = "numeric"

[[analysis]]
kind = "mincer"
response = "y"
terms = ["x", "wage"]
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        match validate(&config) {
            Err(PipelineError::ConfigInvalid(msg)) => assert!(msg.contains("wage"), "{msg}"),
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn estimators_rejected_on_panel_input() {
        let config = minimal_panel_config(
            "[[analysis]]\nkind = \"mincer\"\nresponse = \"y\"\nterms = [\"x\"]\n",
        );
        assert!(matches!(validate(&config), Err(PipelineError::ConfigInvalid(_))));
    }

    #[test]
    fn counterfactual_requires_existing_mincer() {
        let text = r#"
[input]
kind = "synth"
preset = "paper"

[[analysis]]
kind = "counterfactual"
mincer = "wages"
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        match validate(&config) {
            Err(PipelineError::ConfigInvalid(msg)) => assert!(msg.contains("wages")),
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn valid_config_orders_counterfactual_after_mincer() {
        let text = r#"
[input]
kind = "synth"
preset = "paper"

[[analysis]]
kind = "counterfactual"
mincer = "mincer"

[[analysis]]
kind = "mincer"
response = "ln_wage"
terms = ["age"]
"#;
        let config: PipelineConfig = toml::from_str(text).unwrap();
        let order = validate(&config).unwrap();
        let mincer_pos = order.iter().position(|&i| config.analyses[i].kind == "mincer").unwrap();
        let cf_pos =
            order.iter().position(|&i| config.analyses[i].kind == "counterfactual").unwrap();
        assert!(mincer_pos < cf_pos);
    }
}
