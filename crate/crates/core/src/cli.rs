//! Batch front end: run configuration, validation, artifact writing and the
//! subcommand drivers behind the `attlab` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{compose_sample, load_table, standardized_mean_differences, summarize, CovariateSchema, DescriptiveStats, ObservationTable, SourceTag};
use crate::dgp::{generate, monte_carlo, CoverageReport, DgpConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::estimators::{bootstrap_ci, cells_to_delimited, estimate, EstimatorOptions, EstimatorTag, SuiteCell, MIN_REPLICATES};
use crate::forest::ForestParams;
use crate::heterogeneity::{catt_calibration, compare_catt, estimate_catt, CalibrationReport, CattComparison, CattProfile, MarginalBins};
use crate::matching::Metric;
use crate::overlap::{estimate_propensity_with, overlap_histogram, trim_crump, trim_dehejia, trim_paper_pipeline, trim_threshold, HistogramData, PropensityMethod, TrimReport, TrimRule, DEFAULT_BIN_WIDTH, DEFAULT_MEMBERSHIP_THRESHOLD};
use crate::rng::derive_seed;
use crate::validation::{benchmark_delta, placebo_samples, run_placebo_suite, BenchmarkDelta, PlaceboSpec};

/// Version of the JSON envelope written around every artifact.
pub const SCHEMA_VERSION: u32 = 1;
/// Default data directory when neither the config nor a flag names one.
pub const DATA_DIR_ENV: &str = "ATTLAB_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data/ldw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Ingest,
    Summarize,
    Overlap,
    Trim,
    Estimate,
    Catt,
    Placebo,
    Simulate,
    ReplicatePaper,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Summarize => "summarize",
            Self::Overlap => "overlap",
            Self::Trim => "trim",
            Self::Estimate => "estimate",
            Self::Catt => "catt",
            Self::Placebo => "placebo",
            Self::Simulate => "simulate",
            Self::ReplicatePaper => "replicate-paper",
        }
    }

    fn uses_data(self) -> bool {
        self != Self::Simulate
    }

    fn uses_estimators(self) -> bool {
        matches!(self, Self::Estimate | Self::Placebo | Self::ReplicatePaper | Self::Simulate)
    }

    fn uses_trim(self) -> bool {
        matches!(self, Self::Trim | Self::Estimate | Self::Catt | Self::Placebo | Self::ReplicatePaper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaChoice {
    Ldw,
    LalondeOriginal,
}

impl SchemaChoice {
    pub fn schema(self) -> CovariateSchema {
        match self {
            Self::Ldw => CovariateSchema::ldw(),
            Self::LalondeOriginal => CovariateSchema::lalonde_original(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Tsv,
}

/// Everything a run depends on. Loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    /// Treated source: a known name (`ldw_treated`) or a file path.
    pub treated: String,
    /// Comparison sources: known names (`cps`, `psid`) or file paths.
    pub controls: Vec<String>,
    pub experimental_controls: String,
    pub schema: SchemaChoice,
    pub trim: TrimRule,
    /// Membership threshold for the paper pipeline; lower score cut for the
    /// threshold rule, which keeps `[t, 1 - t]`.
    pub trim_threshold: f64,
    pub propensity: PropensityMethod,
    pub estimators: Vec<String>,
    pub seed: Option<u64>,
    pub trees: usize,
    pub dml_folds: usize,
    pub match_k: usize,
    pub metric: Metric,
    pub balance_second_moments: bool,
    /// Replace analytic intervals by percentile bootstrap intervals.
    pub bootstrap: Option<usize>,
    pub bin_width: f64,
    pub catt_bin_width: f64,
    pub placebo: PlaceboSpec,
    pub simulation: DgpConfig,
    /// Monte Carlo replicates for `simulate`; absent means a single draw.
    pub replicates: Option<usize>,
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            treated: "ldw_treated".into(),
            controls: vec!["cps".into()],
            experimental_controls: "ldw_control".into(),
            schema: SchemaChoice::Ldw,
            trim: TrimRule::None,
            trim_threshold: DEFAULT_MEMBERSHIP_THRESHOLD,
            propensity: PropensityMethod::Forest,
            estimators: EstimatorTag::ALL.iter().map(|t| t.as_str().to_string()).collect(),
            seed: None,
            trees: ForestParams::default().trees,
            dml_folds: 5,
            match_k: 5,
            metric: Metric::NormalizedEuclidean,
            balance_second_moments: false,
            bootstrap: None,
            bin_width: DEFAULT_BIN_WIDTH,
            catt_bin_width: 250.0,
            placebo: PlaceboSpec::default(),
            simulation: DgpConfig::default(),
            replicates: None,
            output_dir: PathBuf::from("attlab-out"),
            formats: vec![Format::Json, Format::Csv],
            threads: None,
        }
    }
}

fn known_source(name: &str) -> Option<(&'static str, SourceTag)> {
    match name {
        "ldw_treated" => Some(("nswre74_treated.csv", SourceTag::ExperimentalTreated)),
        "ldw_control" => Some(("nswre74_control.csv", SourceTag::ExperimentalControl)),
        "cps" => Some(("cps_controls.csv", SourceTag::Cps)),
        "psid" => Some(("psid_controls.csv", SourceTag::Psid)),
        _ => None,
    }
}

impl RunConfig {
    /// Defaults for a subcommand: `replicate-paper` covers both comparison
    /// groups with the paper trim.
    pub fn for_command(cmd: CommandKind) -> Self {
        let mut c = Self::default();
        if cmd == CommandKind::ReplicatePaper {
            c.controls = vec!["cps".into(), "psid".into()];
            c.trim = TrimRule::Paper;
        }
        c
    }

    /// Config-file values layered over the command defaults.
    pub fn from_json_over(cmd: CommandKind, text: &str) -> Result<Self> {
        let file: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("config file: {e}")]))?;
        let mut base = serde_json::to_value(Self::for_command(cmd))?;
        merge(&mut base, file);
        serde_json::from_value(base).map_err(|e| Error::Config(vec![format!("config file: {e}")]))
    }

    pub fn resolved_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn source_path(&self, name: &str) -> PathBuf {
        match known_source(name) {
            Some((file, _)) => self.resolved_data_dir().join(file),
            None => PathBuf::from(name),
        }
    }

    /// Short tag naming a comparison source in artifact names.
    pub fn source_tag(name: &str) -> String {
        if known_source(name).is_some() {
            return name.to_string();
        }
        Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.to_string())
    }

    pub fn estimator_tags(&self) -> std::result::Result<Vec<EstimatorTag>, Vec<String>> {
        let mut tags = Vec::new();
        let mut bad = Vec::new();
        for s in &self.estimators {
            match s.parse::<EstimatorTag>() {
                Ok(t) if !tags.contains(&t) => tags.push(t),
                Ok(t) => bad.push(format!("estimator `{t}` listed twice")),
                Err(_) => bad.push(format!("unknown estimator `{s}`")),
            }
        }
        if bad.is_empty() {
            Ok(tags)
        } else {
            Err(bad)
        }
    }

    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn forest(&self, label: &str) -> ForestParams {
        ForestParams {
            trees: self.trees,
            seed: derive_seed(self.seed_or_zero(), label),
            ..ForestParams::default()
        }
    }

    pub fn estimator_options(&self) -> EstimatorOptions {
        let seed = self.seed_or_zero();
        EstimatorOptions {
            seed,
            forest: ForestParams {
                trees: self.trees,
                seed,
                ..ForestParams::default()
            },
            dml_folds: self.dml_folds,
            match_k: self.match_k,
            metric: self.metric,
            balance_second_moments: self.balance_second_moments,
            ..EstimatorOptions::default()
        }
    }

    fn needs_seed(&self, cmd: CommandKind) -> Vec<&'static str> {
        let mut why = Vec::new();
        if cmd.uses_estimators() {
            if let Ok(tags) = self.estimator_tags() {
                if tags.iter().any(|t| t.is_randomized()) {
                    why.push("a forest-based or cross-fitted estimator");
                }
            }
            if self.bootstrap.is_some() {
                why.push("the bootstrap");
            }
        }
        if cmd.uses_trim() && self.trim != TrimRule::None && (self.trim == TrimRule::Paper || self.propensity == PropensityMethod::Forest) {
            why.push("forest-based trimming");
        }
        if cmd == CommandKind::Overlap && self.propensity == PropensityMethod::Forest {
            why.push("forest propensity scores");
        }
        if cmd == CommandKind::Catt {
            why.push("the causal forest");
        }
        if cmd == CommandKind::Simulate {
            why.push("simulation draws");
        }
        why
    }

    /// Input files a command reads, as `(name, path)`.
    fn inputs(&self, cmd: CommandKind) -> Vec<(String, PathBuf)> {
        if !cmd.uses_data() {
            return Vec::new();
        }
        std::iter::once(&self.treated)
            .chain(std::iter::once(&self.experimental_controls))
            .chain(&self.controls)
            .map(|n| (n.clone(), self.source_path(n)))
            .collect()
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Every problem with the configuration for this command.
pub fn validate_config(config: &RunConfig, cmd: CommandKind) -> std::result::Result<(), Vec<String>> {
    let mut p = Vec::new();
    if cmd.uses_data() {
        if config.controls.is_empty() {
            p.push("no comparison sources given".into());
        }
        for (name, path) in config.inputs(cmd) {
            if !path.is_file() {
                p.push(format!("data file for `{name}` not found at {}", path.display()));
            }
        }
        let mut tags: Vec<String> = config.controls.iter().map(|c| RunConfig::source_tag(c)).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            p.push("comparison sources must have distinct names".into());
        }
    }
    if cmd.uses_estimators() {
        match config.estimator_tags() {
            Ok(t) if t.is_empty() => p.push("no estimators requested".into()),
            Ok(_) => {}
            Err(bad) => p.extend(bad),
        }
    }
    let missing_seed = config.needs_seed(cmd);
    if config.seed.is_none() && !missing_seed.is_empty() {
        p.push(format!("a seed is required for {}", missing_seed.join(" and ")));
    }
    if !(config.trim_threshold > 0.0 && config.trim_threshold < 0.5) {
        p.push(format!("trim threshold {} must lie in (0, 0.5)", config.trim_threshold));
    }
    if config.trees == 0 {
        p.push("forests need at least one tree".into());
    }
    if config.match_k == 0 {
        p.push("match_k must be positive".into());
    }
    if config.dml_folds < 2 {
        p.push("dml_folds must be at least 2".into());
    }
    if let Some(b) = config.bootstrap {
        if b < MIN_REPLICATES {
            p.push(format!("bootstrap needs at least {MIN_REPLICATES} replicates, got {b}"));
        }
    }
    for (name, v) in [("bin_width", config.bin_width), ("catt_bin_width", config.catt_bin_width)] {
        if !(v > 0.0 && v.is_finite()) {
            p.push(format!("{name} must be positive"));
        }
    }
    if config.formats.is_empty() {
        p.push("no output formats selected".into());
    }
    if config.threads == Some(0) {
        p.push("threads must be positive".into());
    }
    if cmd == CommandKind::Placebo || cmd == CommandKind::ReplicatePaper {
        if let Err(e) = config.placebo.validate() {
            p.push(e.to_string());
        }
        if !config.schema.schema().covariate_names().contains(&config.placebo.outcome) {
            p.push(format!("placebo outcome `{}` is not a covariate of the schema", config.placebo.outcome));
        }
    }
    if cmd == CommandKind::Simulate {
        p.extend(config.simulation.problems());
        if let Some(r) = config.replicates {
            if r < crate::dgp::MIN_MC_REPLICATES {
                p.push(format!("Monte Carlo needs at least {} replicates, got {r}", crate::dgp::MIN_MC_REPLICATES));
            }
        }
    }
    if p.is_empty() {
        Ok(())
    } else {
        Err(p)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the command, the result-relevant configuration and the content of
/// every input file. Output location, thread count and the data directory
/// path do not enter.
pub fn config_hash(config: &RunConfig, cmd: CommandKind) -> Result<String> {
    let mut canonical = config.clone();
    canonical.data_dir = None;
    canonical.output_dir = PathBuf::new();
    canonical.threads = None;
    let mut inputs = Vec::new();
    for (name, path) in config.inputs(cmd) {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        inputs.push((name, sha256_hex(&bytes)));
    }
    let text = serde_json::to_string(&(cmd, &canonical, inputs))?;
    Ok(sha256_hex(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    pub config_hash: String,
    pub config: RunConfig,
    pub files: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    schema_version: u32,
    kind: &'a str,
    config_hash: &'a str,
    data: &'a T,
}

/// Writes artifacts into the output directory and records them for the manifest.
pub struct Artifacts {
    dir: PathBuf,
    config_hash: String,
    formats: Vec<Format>,
    files: Vec<ManifestEntry>,
}

impl Artifacts {
    pub fn new(dir: &Path, config_hash: String, formats: Vec<Format>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            formats,
            files: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn write(&mut self, name: String, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(&name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.files.push(ManifestEntry {
            path: name,
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, kind: &str, data: &T) -> Result<()> {
        if !self.formats.contains(&Format::Json) {
            return Ok(());
        }
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            kind,
            config_hash: &self.config_hash,
            data,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write(format!("{stem}.json"), text.as_bytes())
    }

    /// Plot or table data; the first line is a comment carrying the hash.
    pub fn table(&mut self, stem: &str, render: impl Fn(char) -> String) -> Result<()> {
        for (fmt, sep, ext) in [(Format::Csv, ',', "csv"), (Format::Tsv, '\t', "tsv")] {
            if self.formats.contains(&fmt) {
                let text = format!("# config_hash={}\n{}", self.config_hash, render(sep));
                self.write(format!("{stem}.{ext}"), text.as_bytes())?;
            }
        }
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, cmd: CommandKind, config: &RunConfig) -> Result<Manifest> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: cmd,
            config_hash: self.config_hash.clone(),
            config: config.clone(),
            files: self.files,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

/// Loaded inputs.
pub struct Data {
    pub treated: ObservationTable,
    pub exp_controls: ObservationTable,
    /// `(tag, controls)` per comparison source.
    pub controls: Vec<(String, ObservationTable)>,
}

impl Data {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let schema = config.schema.schema();
        let load = |name: &str, fallback: SourceTag| {
            let tag = known_source(name).map(|k| k.1).unwrap_or(fallback);
            load_table(config.source_path(name), &schema, tag)
        };
        let treated = load(&config.treated, SourceTag::ExperimentalTreated)?;
        let exp_controls = load(&config.experimental_controls, SourceTag::ExperimentalControl)?;
        let controls = config
            .controls
            .iter()
            .map(|c| Ok((RunConfig::source_tag(c), load(c, SourceTag::External)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            treated,
            exp_controls,
            controls,
        })
    }

    pub fn experimental(&self) -> Result<ObservationTable> {
        compose_sample(&self.treated, &self.exp_controls)
    }

    pub fn nonexperimental(&self) -> Result<Vec<(String, ObservationTable)>> {
        self.controls
            .iter()
            .map(|(tag, c)| Ok((tag.clone(), compose_sample(&self.treated, c)?)))
            .collect()
    }
}

/// A trimmed sample with its experimental benchmark when the rule provides one.
#[derive(Debug, Clone)]
pub struct Trimmed {
    pub tag: String,
    pub sample: ObservationTable,
    pub benchmark: Option<ObservationTable>,
    pub report: TrimReport,
}

pub fn apply_trim(config: &RunConfig, tag: &str, sample: &ObservationTable, exp_controls: &ObservationTable) -> Result<Option<Trimmed>> {
    let params = config.forest(&format!("trim-{tag}"));
    let report_and_sample = |report: TrimReport| {
        let s = sample.subset(&report.retained());
        (report, s)
    };
    let (report, trimmed, benchmark) = match config.trim {
        TrimRule::None => return Ok(None),
        TrimRule::Paper => {
            let r = trim_paper_pipeline(sample, exp_controls, config.trim_threshold, &params)?;
            (r.report, r.trimmed, Some(r.benchmark))
        }
        rule => {
            let fit = estimate_propensity_with(sample, config.propensity, &params)?;
            let report = match rule {
                TrimRule::Threshold => trim_threshold(&fit, config.trim_threshold, 1.0 - config.trim_threshold)?,
                TrimRule::Crump => trim_crump(&fit)?,
                _ => trim_dehejia(&fit)?,
            };
            let (report, s) = report_and_sample(report);
            (report, s, None)
        }
    };
    Ok(Some(Trimmed {
        tag: format!("{tag}-trimmed"),
        sample: trimmed,
        benchmark,
        report,
    }))
}

/// The suite on one sample, with bootstrap intervals when configured.
pub fn suite(config: &RunConfig, sample: &ObservationTable, sample_tag: &str, tags: &[EstimatorTag]) -> Vec<SuiteCell> {
    let opts = config.estimator_options();
    tags.par_iter()
        .map(|&tag| {
            let result = match config.bootstrap {
                Some(b) => bootstrap_ci(sample, tag, &opts, b, derive_seed(opts.seed, &format!("bootstrap-{tag}"))),
                None => estimate(sample, tag, &opts),
            };
            match result {
                Ok(e) => SuiteCell {
                    estimator: tag,
                    sample: sample_tag.to_string(),
                    estimate: Some(e.with_sample(sample_tag)),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{tag} on {sample_tag}: {e}");
                    SuiteCell {
                        estimator: tag,
                        sample: sample_tag.to_string(),
                        estimate: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct SourceInfo {
    name: String,
    source: String,
    rows: usize,
    treated: usize,
    control: usize,
    covariates: Vec<String>,
    absent_indicators: Vec<String>,
}

fn source_info(name: &str, t: &ObservationTable) -> SourceInfo {
    SourceInfo {
        name: name.to_string(),
        source: t.keys().first().map(|k| k.source.to_string()).unwrap_or_default(),
        rows: t.n(),
        treated: t.n_treated(),
        control: t.n_control(),
        covariates: t.covariate_names().to_vec(),
        absent_indicators: t.absent_indicators().to_vec(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SampleSummary {
    sample: String,
    stats: DescriptiveStats,
    standardized_differences: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
struct OverlapArtifact {
    sample: String,
    method: PropensityMethod,
    separated: bool,
    histogram: HistogramData,
}

#[derive(Debug, Clone, Serialize)]
struct TrimArtifact {
    sample: String,
    n_treated: usize,
    n_control: usize,
    benchmark: Option<(usize, usize)>,
    report: TrimReport,
}

#[derive(Debug, Clone, Serialize)]
struct CattArtifact {
    experimental: CattProfile,
    nonexperimental: CattProfile,
    comparison: CattComparison,
    bins: MarginalBins,
    calibration: Option<CalibrationReport>,
}

#[derive(Debug, Clone, Serialize)]
struct PlaceboArtifact {
    cells: Vec<SuiteCell>,
    deltas: Vec<(String, BenchmarkDelta)>,
}

/// Outcome of a command: the manifest plus the suite cells it produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub cells: Vec<SuiteCell>,
}

struct Runner<'a> {
    config: &'a RunConfig,
    out: Artifacts,
    cells: Vec<SuiteCell>,
}

impl Runner<'_> {
    fn ingest(&mut self, data: &Data) -> Result<()> {
        let mut info = vec![
            source_info(&self.config.treated, &data.treated),
            source_info(&self.config.experimental_controls, &data.exp_controls),
        ];
        for (name, (_, t)) in self.config.controls.iter().zip(&data.controls) {
            info.push(source_info(name, t));
        }
        self.out.json("ingest", "ingest", &info)
    }

    fn summarize(&mut self, samples: &[(String, ObservationTable)]) -> Result<()> {
        for (tag, s) in samples {
            let stats = summarize(s)?;
            let summary = SampleSummary {
                sample: tag.clone(),
                standardized_differences: standardized_mean_differences(s),
                stats,
            };
            self.out.json(&format!("summary_{tag}"), "summary", &summary)?;
            self.out.table(&format!("summary_{tag}"), |sep| summary.stats.to_delimited(sep))?;
        }
        Ok(())
    }

    fn overlap(&mut self, samples: &[(String, ObservationTable)]) -> Result<()> {
        for (tag, s) in samples {
            let fit = estimate_propensity_with(s, self.config.propensity, &self.config.forest(&format!("overlap-{tag}")))?;
            let art = OverlapArtifact {
                sample: tag.clone(),
                method: fit.method,
                separated: fit.separated,
                histogram: overlap_histogram(&fit, self.config.bin_width)?,
            };
            self.out.json(&format!("overlap_{tag}"), "overlap", &art)?;
            self.out.table(&format!("overlap_{tag}"), |sep| art.histogram.to_delimited(sep))?;
        }
        Ok(())
    }

    fn trims(&mut self, data: &Data, full: &[(String, ObservationTable)]) -> Result<Vec<Trimmed>> {
        let mut out = Vec::new();
        for (tag, s) in full {
            if let Some(t) = apply_trim(self.config, tag, s, &data.exp_controls)? {
                let art = TrimArtifact {
                    sample: t.tag.clone(),
                    n_treated: t.sample.n_treated(),
                    n_control: t.sample.n_control(),
                    benchmark: t.benchmark.as_ref().map(|b| (b.n_treated(), b.n_control())),
                    report: t.report.clone(),
                };
                self.out.json(&format!("trim_{tag}"), "trim", &art)?;
                out.push(t);
            }
        }
        Ok(out)
    }

    fn estimate(&mut self, samples: &[(String, ObservationTable)]) -> Result<()> {
        let tags = self.config.estimator_tags().map_err(Error::Config)?;
        for (tag, s) in samples {
            let cells = suite(self.config, s, tag, &tags);
            self.out.json(&format!("att_{tag}"), "att", &cells)?;
            self.out.table(&format!("att_{tag}"), |sep| cells_to_delimited(&cells, sep))?;
            self.cells.extend(cells);
        }
        Ok(())
    }

    fn catt(&mut self, data: &Data, full: &[(String, ObservationTable)], trimmed: &[Trimmed]) -> Result<()> {
        let exp = data.experimental()?;
        let exp_profile = estimate_catt(&exp, &self.config.forest("catt-experimental"), "experimental")?;
        let dim = estimate(&exp, EstimatorTag::DiffInMeans, &self.config.estimator_options())?;
        let calibration = catt_calibration(&exp_profile, &dim);
        let mut pairs: Vec<(String, CattProfile, &ObservationTable)> = Vec::new();
        for (tag, s) in full {
            pairs.push((tag.clone(), exp_profile.clone(), s));
        }
        let mut bench_profiles = Vec::new();
        for t in trimmed {
            if let Some(b) = &t.benchmark {
                let bench_tag = format!("{}-benchmark", t.tag);
                bench_profiles.push((t.tag.clone(), estimate_catt(b, &self.config.forest(&format!("catt-{bench_tag}")), &bench_tag)?));
            }
        }
        for t in trimmed {
            if let Some((_, p)) = bench_profiles.iter().find(|(k, _)| *k == t.tag) {
                pairs.push((t.tag.clone(), p.clone(), &t.sample));
            }
        }
        for (tag, reference, sample) in pairs {
            let profile = estimate_catt(sample, &self.config.forest(&format!("catt-{tag}")), &tag)?;
            let comparison = compare_catt(&reference, &profile, (reference.mean(), profile.mean()))?;
            let bins = comparison.marginal_bins(self.config.catt_bin_width)?;
            let art = CattArtifact {
                calibration: (reference.sample == "experimental").then(|| calibration.clone()),
                experimental: reference,
                nonexperimental: profile,
                comparison,
                bins,
            };
            self.out.json(&format!("catt_{tag}"), "catt", &art)?;
            self.out.table(&format!("catt_{tag}"), |sep| art.comparison.to_delimited(sep))?;
        }
        Ok(())
    }

    fn placebo(&mut self, data: &Data) -> Result<()> {
        let tags = self.config.estimator_tags().map_err(Error::Config)?;
        let mut spec = self.config.placebo.clone();
        spec.retrim = spec.retrim && self.config.trim == TrimRule::Paper;
        let samples = placebo_samples(
            &data.treated,
            &data.exp_controls,
            &data.controls,
            &spec,
            self.config.trim_threshold,
            &self.config.forest("placebo-trim"),
        )?;
        let mut cells = Vec::new();
        if self.config.bootstrap.is_some() {
            for s in &samples {
                cells.extend(suite(self.config, &s.table, &s.tag, &tags));
            }
        } else {
            cells = run_placebo_suite(&samples, &tags, &self.config.estimator_options());
        }
        let mut deltas = Vec::new();
        for s in samples.iter().filter(|s| s.tag.ends_with("-trimmed")) {
            let bench = format!("{}-benchmark", s.tag);
            for c in cells.iter().filter(|c| c.sample == s.tag) {
                let b = cells.iter().find(|d| d.sample == bench && d.estimator == c.estimator);
                if let (Some(e), Some(Some(be))) = (&c.estimate, b.map(|b| &b.estimate)) {
                    deltas.push((s.tag.clone(), benchmark_delta(e, be)));
                }
            }
        }
        let art = PlaceboArtifact { cells, deltas };
        self.out.json("placebo", "placebo", &art)?;
        self.out.table("placebo", |sep| cells_to_delimited(&art.cells, sep))?;
        Ok(())
    }

    fn simulate(&mut self) -> Result<()> {
        let dgp = DgpConfig {
            seed: self.config.seed_or_zero(),
            ..self.config.simulation.clone()
        };
        let (table, truth) = generate(&dgp)?;
        self.out.json("truth", "truth", &truth)?;
        self.out.table("synthetic", |sep| table_to_delimited(&table, sep))?;
        if let Some(r) = self.config.replicates {
            let tags = self.config.estimator_tags().map_err(Error::Config)?;
            let opts = self.config.estimator_options();
            let reports = tags
                .iter()
                .map(|&t| monte_carlo(&dgp, t, &opts, r))
                .collect::<Result<Vec<CoverageReport>>>()?;
            self.out.json("monte_carlo", "monte_carlo", &reports)?;
            self.out.table("monte_carlo", |sep| coverage_to_delimited(&reports, sep))?;
        }
        Ok(())
    }
}

fn table_to_delimited(t: &ObservationTable, sep: char) -> String {
    let s = sep.to_string();
    let mut out = t.covariate_names().join(&s);
    out.push_str(&format!("{s}treat{s}{}\n", t.outcome_name()));
    for i in 0..t.n() {
        let row: Vec<String> = t.x().row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{}{s}{}{s}{}\n", row.join(&s), t.w()[i], t.y()[i]));
    }
    out
}

fn coverage_to_delimited(reports: &[CoverageReport], sep: char) -> String {
    let s = sep.to_string();
    let mut out = ["estimator", "replicates", "failures", "bias", "rmse", "coverage", "mean_se", "dominance_rate"].join(&s);
    out.push('\n');
    for r in reports {
        let f = [
            r.label.clone(),
            r.replicates.to_string(),
            r.failures.to_string(),
            r.bias.to_string(),
            r.rmse.to_string(),
            r.coverage.to_string(),
            r.mean_se.to_string(),
            r.dominance_rate.to_string(),
        ];
        out.push_str(&f.join(&s));
        out.push('\n');
    }
    out
}

/// Validates, runs one command and writes its artifacts and manifest.
pub fn run(cmd: CommandKind, config: &RunConfig) -> Result<RunOutput> {
    validate_config(config, cmd).map_err(Error::Config)?;
    let hash = config_hash(config, cmd)?;
    let mut r = Runner {
        config,
        out: Artifacts::new(&config.output_dir, hash, config.formats.clone())?,
        cells: Vec::new(),
    };
    if cmd == CommandKind::Simulate {
        r.simulate()?;
    } else {
        let data = Data::load(config)?;
        let exp = vec![("experimental".to_string(), data.experimental()?)];
        let full = data.nonexperimental()?;
        match cmd {
            CommandKind::Ingest => r.ingest(&data)?,
            CommandKind::Summarize => r.summarize(&[exp, full].concat())?,
            CommandKind::Overlap => r.overlap(&[exp, full].concat())?,
            CommandKind::Trim => {
                let trimmed = r.trims(&data, &full)?;
                r.summarize(&trimmed_samples(&trimmed))?;
            }
            CommandKind::Estimate => {
                let trimmed = r.trims(&data, &full)?;
                if trimmed.is_empty() {
                    r.estimate(&full)?;
                } else {
                    r.estimate(&trimmed_samples(&trimmed))?;
                }
            }
            CommandKind::Catt => {
                let trimmed = r.trims(&data, &full)?;
                r.catt(&data, &full, &trimmed)?;
            }
            CommandKind::Placebo => r.placebo(&data)?,
            CommandKind::ReplicatePaper => {
                r.ingest(&data)?;
                let trimmed = r.trims(&data, &full)?;
                let trimmed_set = trimmed_samples(&trimmed);
                let all = [exp.clone(), full.clone(), trimmed_set.clone()].concat();
                r.summarize(&all)?;
                let overlap_set = [exp, full.clone(), trimmed_set.into_iter().filter(|(t, _)| !t.ends_with("-benchmark")).collect()].concat();
                r.overlap(&overlap_set)?;
                r.estimate(&all)?;
                let cells = r.cells.clone();
                r.out.json("results", "results", &cells)?;
                r.out.table("results", |sep| cells_to_delimited(&cells, sep))?;
                r.catt(&data, &full, &trimmed)?;
                r.placebo(&data)?;
            }
            CommandKind::Simulate => unreachable!(),
        }
    }
    let cells = std::mem::take(&mut r.cells);
    let manifest = r.out.finish(cmd, config)?;
    Ok(RunOutput { manifest, cells })
}

/// Trimmed samples followed by their benchmarks.
fn trimmed_samples(trimmed: &[Trimmed]) -> Vec<(String, ObservationTable)> {
    let mut out = Vec::new();
    for t in trimmed {
        out.push((t.tag.clone(), t.sample.clone()));
        if let Some(b) = &t.benchmark {
            out.push((format!("{}-benchmark", t.tag), b.clone()));
        }
    }
    out
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Machine-readable error report.
pub fn error_report(e: &Error) -> Value {
    let kind = match e.kind() {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    };
    let details = match e {
        Error::Config(list) => list.clone(),
        other => vec![other.to_string()],
    };
    serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "kind": kind, "exit_code": exit_code(e), "messages": details },
    })
}

#[derive(Debug, Parser)]
#[command(name = "attlab", version, about = "ATT estimation with overlap diagnostics, trimming and placebo checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check the input files.
    Ingest(Flags),
    /// Descriptive statistics by arm.
    Summarize(Flags),
    /// Propensity scores and log-odds histograms.
    Overlap(Flags),
    /// Apply the trim rule and report what was kept.
    Trim(Flags),
    /// Run the estimator suite.
    Estimate(Flags),
    /// Conditional effects on the treated from a causal forest.
    Catt(Flags),
    /// Estimators on a pre-treatment outcome.
    Placebo(Flags),
    /// Draw synthetic data and optionally run a Monte Carlo study.
    Simulate(Flags),
    /// The full grid over comparison groups, trimmed and untrimmed.
    ReplicatePaper(Flags),
}

impl Command {
    pub fn split(&self) -> (CommandKind, &Flags) {
        match self {
            Command::Ingest(f) => (CommandKind::Ingest, f),
            Command::Summarize(f) => (CommandKind::Summarize, f),
            Command::Overlap(f) => (CommandKind::Overlap, f),
            Command::Trim(f) => (CommandKind::Trim, f),
            Command::Estimate(f) => (CommandKind::Estimate, f),
            Command::Catt(f) => (CommandKind::Catt, f),
            Command::Placebo(f) => (CommandKind::Placebo, f),
            Command::Simulate(f) => (CommandKind::Simulate, f),
            Command::ReplicatePaper(f) => (CommandKind::ReplicatePaper, f),
        }
    }
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the input files [env: ATTLAB_DATA_DIR].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub treated: Option<String>,
    /// Comparison sources, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub controls: Vec<String>,
    #[arg(long)]
    pub experimental_controls: Option<String>,
    /// ldw | lalonde-original
    #[arg(long)]
    pub schema: Option<String>,
    /// none | threshold | crump | dehejia | paper
    #[arg(long)]
    pub trim: Option<String>,
    #[arg(long)]
    pub trim_threshold: Option<f64>,
    /// logit | forest
    #[arg(long)]
    pub propensity: Option<String>,
    /// Estimator tags, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub dml_folds: Option<usize>,
    #[arg(long)]
    pub match_k: Option<usize>,
    /// normalized-euclidean | mahalanobis
    #[arg(long)]
    pub metric: Option<String>,
    /// Percentile bootstrap replicates.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub catt_bin_width: Option<f64>,
    /// Monte Carlo replicates for `simulate`.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sample size for `simulate`.
    #[arg(long)]
    pub sim_n: Option<usize>,
    #[arg(long)]
    pub sim_epsilon: Option<f64>,
    #[arg(long)]
    pub sim_confounding: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// json, csv, tsv; comma separated.
    #[arg(long = "format", value_delimiter = ',')]
    pub formats: Vec<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_enum<T: DeserializeOwned>(field: &str, raw: &str, problems: &mut Vec<String>) -> Option<T> {
    match serde_json::from_value(Value::String(raw.to_string())) {
        Ok(v) => Some(v),
        Err(_) => {
            problems.push(format!("invalid {field} `{raw}`"));
            None
        }
    }
}

/// Builds the run configuration: command defaults, then the config file,
/// then flags.
pub fn build_config(cmd: CommandKind, flags: &Flags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("config file {}: {e}", path.display())]))?;
            RunConfig::from_json_over(cmd, &text)?
        }
        None => RunConfig::for_command(cmd),
    };
    let mut bad = Vec::new();
    if let Some(v) = &flags.data_dir {
        c.data_dir = Some(v.clone());
    }
    if let Some(v) = &flags.treated {
        c.treated = v.clone();
    }
    if !flags.controls.is_empty() {
        c.controls = flags.controls.clone();
    }
    if let Some(v) = &flags.experimental_controls {
        c.experimental_controls = v.clone();
    }
    if let Some(v) = flags.schema.as_deref().and_then(|s| parse_enum("schema", s, &mut bad)) {
        c.schema = v;
    }
    if let Some(raw) = &flags.trim {
        match raw.parse::<TrimRule>() {
            Ok(v) => c.trim = v,
            Err(e) => bad.push(e.to_string()),
        }
    }
    if let Some(v) = flags.trim_threshold {
        c.trim_threshold = v;
    }
    if let Some(v) = flags.propensity.as_deref().and_then(|s| parse_enum("propensity method", s, &mut bad)) {
        c.propensity = v;
    }
    if !flags.estimators.is_empty() {
        c.estimators = flags.estimators.clone();
    }
    if flags.seed.is_some() {
        c.seed = flags.seed;
    }
    if let Some(v) = flags.trees {
        c.trees = v;
    }
    if let Some(v) = flags.dml_folds {
        c.dml_folds = v;
    }
    if let Some(v) = flags.match_k {
        c.match_k = v;
    }
    if let Some(v) = flags.metric.as_deref().and_then(|s| parse_enum("metric", s, &mut bad)) {
        c.metric = v;
    }
    if flags.bootstrap.is_some() {
        c.bootstrap = flags.bootstrap;
    }
    if let Some(v) = flags.bin_width {
        c.bin_width = v;
    }
    if let Some(v) = flags.catt_bin_width {
        c.catt_bin_width = v;
    }
    if flags.replicates.is_some() {
        c.replicates = flags.replicates;
    }
    if let Some(v) = flags.sim_n {
        c.simulation.n = v;
    }
    if let Some(v) = flags.sim_epsilon {
        c.simulation.epsilon = v;
    }
    if let Some(v) = flags.sim_confounding {
        c.simulation.confounding = v;
    }
    if let Some(v) = &flags.out {
        c.output_dir = v.clone();
    }
    if !flags.formats.is_empty() {
        let parsed: Vec<Format> = flags.formats.iter().filter_map(|s| parse_enum("format", s, &mut bad)).collect();
        c.formats = parsed;
    }
    if flags.threads.is_some() {
        c.threads = flags.threads;
    }
    if bad.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(bad))
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let (cmd, flags) = cli.command.split();
    let result = build_config(cmd, flags).and_then(|config| {
        if let Some(n) = config.threads {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("thread cap not applied: {e}");
            }
        }
        run(cmd, &config).map(|o| (o, config))
    });
    match result {
        Ok((o, config)) => {
            println!(
                "{} files written to {} (config {})",
                o.manifest.files.len() + 1,
                config.output_dir.display(),
                &o.manifest.config_hash[..12]
            );
            0
        }
        Err(e) => {
            let report = error_report(&e);
            eprintln!("{}", serde_json::to_string_pretty(&report).unwrap_or_else(|_| e.to_string()));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let c = RunConfig::from_json_over(CommandKind::Estimate, r#"{"seed": 3, "trees": 10, "simulation": {"n": 50}}"#).unwrap();
        assert_eq!((c.seed, c.trees, c.simulation.n), (Some(3), 10, 50));
        assert_eq!(c.simulation.noise_sd, DgpConfig::default().noise_sd);
        let flags = Flags {
            seed: Some(9),
            ..Flags::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 3}"#).unwrap();
        let c = build_config(CommandKind::Estimate, &Flags { config: Some(path), ..flags }).unwrap();
        assert_eq!(c.seed, Some(9));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json_over(CommandKind::Estimate, r#"{"sead": 3}"#), Err(Error::Config(_))));
    }

    #[test]
    fn validation_reports_every_problem() {
        let c = RunConfig {
            data_dir: Some("/nonexistent".into()),
            estimators: vec!["ols".into(), "bogus".into()],
            trim_threshold: 0.7,
            ..RunConfig::default()
        };
        let errs = validate_config(&c, CommandKind::Estimate).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("ldw_treated")));
        assert!(errs.iter().any(|e| e.contains("cps")));
        assert!(errs.iter().any(|e| e.contains("bogus")));
        assert!(errs.iter().any(|e| e.contains("trim threshold")));
    }

    #[test]
    fn forest_estimators_need_a_seed() {
        let c = RunConfig {
            estimators: vec!["aipw".into()],
            ..RunConfig::default()
        };
        let errs = validate_config(&c, CommandKind::Simulate).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("seed")), "{errs:?}");
        let c = RunConfig {
            seed: Some(1),
            ..c
        };
        assert!(validate_config(&c, CommandKind::Simulate).is_ok());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(exit_code(&Error::Config(vec![])), 1);
        assert_eq!(exit_code(&Error::Schema("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
    }
}
