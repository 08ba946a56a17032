//! Command-line front end.
//!
//! Every subcommand reads flat files, writes its artifact to `--out` (or
//! standard output when `--out` is omitted and the subcommand allows it) and
//! prints a short summary. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 infeasible request.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use actgraph::archive::{estimate_relationship_frequencies, ArchiveError, ArchiveManifest, FreqOptions};
use actgraph::matcher::{MatchError, ResultDocument};
use actgraph::planner::PlanError;
use actgraph::querymodel::{parse_activity_graph, serialize_activity_graph, QueryError};
use actgraph::synthlab::{
    brute_force_ground, calibrate, evaluate_ranked, generate_archive, CalibrateOptions, GroundTruth, NoiseParams,
    SynthConfig, SynthError, Template,
};
use actgraph::{hpst, retrieve, select_thresholds, ActivityGraph, ArchiveStore, CalibrationModel, RetrievalConfig};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::service;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage error (unknown flag, value out of range)
  2  data error (unreadable or invalid input file)
  3  infeasible request (recall target unreachable with the model's statistics)";

#[derive(Debug, Parser)]
#[command(name = "actgraph", version, about = "Activity-graph retrieval over tracked-object archives")]
#[command(after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an observation file and write its manifest.
    #[command(after_help = EXIT_CODES)]
    Ingest(IngestArgs),
    /// Train concept models on a labeled synthetic archive.
    #[command(after_help = EXIT_CODES)]
    Calibrate(CalibrateArgs),
    /// Show the spanning tree and thresholds chosen for a query.
    #[command(after_help = EXIT_CODES)]
    Plan(PlanArgs),
    /// Retrieve ranked groundings of a query.
    #[command(after_help = EXIT_CODES)]
    Query(QueryArgs),
    /// Generate a synthetic archive with planted activities.
    #[command(after_help = EXIT_CODES)]
    Generate(GenerateArgs),
    /// Score a result document against generator truth.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Exhaustive best grounding of a query over a small archive.
    #[command(after_help = EXIT_CODES)]
    Oracle(OracleArgs),
    /// Serve the HTTP API.
    #[command(after_help = EXIT_CODES)]
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Observation file, one JSON record per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Model bundle; when given, relationship frequencies go into the manifest.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Pairs sampled for relationship frequencies [default: min(100000, all pairs)].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sampling seed for relationship frequencies.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Generator truth file carrying per-observation labels.
    #[arg(long)]
    pub truth: PathBuf,
    /// Training seed.
    #[arg(long, default_value_t = CalibrateOptions::default().seed)]
    pub seed: u64,
    /// Labeled pairs per relationship and sampling scheme.
    #[arg(long, default_value_t = CalibrateOptions::default().pair_samples)]
    pub pair_samples: usize,
    /// Positive tracklet pairs for re-identification.
    #[arg(long, default_value_t = CalibrateOptions::default().reid_pairs)]
    pub reid_pairs: usize,
    /// Model bundle path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Inputs shared by the subcommands that run a query against an archive.
#[derive(Debug, Args)]
pub struct QueryInputs {
    /// Observation file, one JSON record per line.
    #[arg(long)]
    pub archive: PathBuf,
    /// Model bundle from `calibrate`.
    #[arg(long)]
    pub models: PathBuf,
    /// Query document.
    #[arg(long)]
    pub query: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub inputs: QueryInputs,
    /// Target recall in (0, 1].
    #[arg(long, default_value_t = RetrievalConfig::default().eta, value_parser = eta)]
    pub eta: f64,
    /// Plan path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub inputs: QueryInputs,
    /// Target recall in (0, 1].
    #[arg(long, default_value_t = RetrievalConfig::default().eta, value_parser = eta)]
    pub eta: f64,
    /// Number of groundings returned.
    #[arg(long, default_value_t = RetrievalConfig::default().k)]
    pub k: usize,
    /// Tree groundings kept per root observation.
    #[arg(long, default_value_t = RetrievalConfig::default().top_r, value_parser = positive)]
    pub top_r: usize,
    /// Refinement rounds when nothing passes the thresholds.
    #[arg(long, default_value_t = RetrievalConfig::default().rounds)]
    pub rounds: usize,
    /// Threshold multiplier per refinement round, in (0, 1).
    #[arg(long, default_value_t = RetrievalConfig::default().decay, value_parser = decay)]
    pub decay: f64,
    /// Score same_entity across tracks as eps instead of using re-ID.
    #[arg(long)]
    pub no_reid: bool,
    /// Result path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl QueryArgs {
    pub fn config(&self) -> RetrievalConfig {
        RetrievalConfig {
            eta: self.eta,
            k: self.k,
            top_r: self.top_r,
            rounds: self.rounds,
            decay: self.decay,
            reid: !self.no_reid,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// person_mount, object_deposit, group_meeting or car_following.
    #[arg(long, value_parser = template)]
    pub template: Template,
    /// Planted instances.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Clutter tracklets.
    #[arg(long, default_value_t = SynthConfig::default().n_clutter)]
    pub clutter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Archive length in seconds.
    #[arg(long, default_value_t = SynthConfig::default().duration)]
    pub duration: f64,
    /// Fraction of observations deleted.
    #[arg(long, default_value_t = 0.0, value_parser = unit)]
    pub miss_rate: f64,
    /// Probability that a tracklet is split in two.
    #[arg(long, default_value_t = 0.0, value_parser = unit)]
    pub break_rate: f64,
    /// Standard deviation of noise added to every margin.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub margin_noise: f64,
    /// Output directory; receives archive.jsonl, truth.json and query.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result document from `query`.
    #[arg(long)]
    pub result: PathBuf,
    /// Truth file from `generate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Only score against instances of this template.
    #[arg(long, value_parser = template)]
    pub template: Option<Template>,
    /// Report path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the PR curve as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub inputs: QueryInputs,
    /// Grounding path [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Observation file to load; without it queries answer 409.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Append-only query log, one JSON record per line.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Directory of static console assets served at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

fn eta(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1]"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn decay(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is not a finite non-negative number"))
    }
}

fn template(s: &str) -> Result<Template, String> {
    Template::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Plan(p) => p.into(),
            other => data(other),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            other => data(other),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Match(m) => m.into(),
            other => data(other),
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        data(e)
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        data(e)
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Output goes to `stdout`, diagnostics to standard error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if code == 0 {
                let _ = write!(stdout, "{}", e.render());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("actgraph: {e}");
            e.code()
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(a, stdout),
        Command::Calibrate(a) => calibrate_cmd(a, stdout),
        Command::Plan(a) => plan(a, stdout),
        Command::Query(a) => query(a, stdout),
        Command::Generate(a) => generate(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Oracle(a) => oracle(a, stdout),
        Command::Serve(a) => serve(a, stdout),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_archive(path: &Path) -> Result<ArchiveStore, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    ArchiveStore::from_jsonl(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_models(path: &Path) -> Result<CalibrationModel, CliError> {
    CalibrationModel::from_json(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_query(path: &Path) -> Result<ActivityGraph, CliError> {
    parse_activity_graph(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts always serialize");
    s.push('\n');
    s
}

/// Writes an artifact to `out`, or to `stdout` when there is none; the
/// summary is printed only in the first case.
fn emit(out: Option<&Path>, text: &str, summary: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_file(path, text)?;
            writeln!(stdout, "{summary}\nwrote {}", path.display()).map_err(data)
        }
        None => stdout.write_all(text.as_bytes()).map_err(data),
    }
}

fn ingest(a: IngestArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = load_archive(&a.input)?;
    let mut manifest = ArchiveManifest::new(a.input.display().to_string(), &store);
    if let Some(models) = &a.models {
        let models = load_models(models)?;
        let opts = FreqOptions {
            n_samples: a.samples,
            seed: a.seed,
            ..FreqOptions::default()
        };
        manifest.frequencies = Some(estimate_relationship_frequencies(&store, &models, &opts)?);
    }
    let summary = format!(
        "{} observations in {} tracklets, checksum {}",
        manifest.count, manifest.tracklets, manifest.checksum
    );
    emit(a.out.as_deref(), &pretty(&manifest), &summary, stdout)
}

fn calibrate_cmd(a: CalibrateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = load_archive(&a.archive)?;
    let truth = GroundTruth::from_json(&read(&a.truth)?).map_err(|e| CliError::Data(format!("{}: {e}", a.truth.display())))?;
    let opts = CalibrateOptions {
        pair_samples: a.pair_samples,
        reid_pairs: a.reid_pairs,
        seed: a.seed,
        ..CalibrateOptions::default()
    };
    let models = calibrate(&store, &truth.labels, &opts)?;
    write_file(&a.out, &models.to_json())?;
    writeln!(stdout, "calibrated on {} observations\nwrote {}", store.len(), a.out.display()).map_err(data)
}

#[derive(Serialize)]
struct PlanDocument {
    eta: f64,
    tree: actgraph::SpanningTree,
    thresholds: actgraph::ThresholdAssignment,
    frequencies: actgraph::RelFreqTable,
}

fn plan(a: PlanArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = load_archive(&a.inputs.archive)?;
    let models = load_models(&a.inputs.models)?;
    let graph = load_query(&a.inputs.query)?;
    let freqs = estimate_relationship_frequencies(&store, &models, &FreqOptions::default())?;
    let tree = hpst(&graph, &freqs)?;
    let stats = models.stats.as_ref().ok_or_else(|| data(MatchError::NoStats))?;
    let thresholds = select_thresholds(&graph, stats, a.eta)?;
    let summary = format!("root {}, tree weight {:.4}", tree.root, tree.total_weight);
    let doc = PlanDocument {
        eta: a.eta,
        tree,
        thresholds,
        frequencies: freqs,
    };
    emit(a.out.as_deref(), &pretty(&doc), &summary, stdout)
}

fn query(a: QueryArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = load_archive(&a.inputs.archive)?;
    let models = load_models(&a.inputs.models)?;
    let graph = load_query(&a.inputs.query)?;
    let freqs = estimate_relationship_frequencies(&store, &models, &FreqOptions::default())?;
    let result = retrieve(&graph, &store, &models, &freqs, &a.config())?;
    let doc = result.document();
    let summary = match doc.groundings.first() {
        Some(best) => format!(
            "{} groundings, best log score {:.4}, {} refinement rounds",
            doc.groundings.len(),
            best.full_log_score,
            doc.refinement_rounds
        ),
        None => format!("no groundings after {} refinement rounds", doc.refinement_rounds),
    };
    emit(a.out.as_deref(), &pretty(&doc), &summary, stdout)
}

fn generate(a: GenerateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = SynthConfig {
        n_clutter: a.clutter,
        duration: a.duration,
        noise: NoiseParams {
            miss_rate: a.miss_rate,
            track_break_rate: a.break_rate,
            margin_noise_sigma: a.margin_noise,
        },
        seed: a.seed,
        ..SynthConfig::default()
    }
    .with_planted(a.template, a.count);
    let (store, truth) = generate_archive(&config)?;
    let archive = a.out.join("archive.jsonl");
    write_file(&archive, &store.to_jsonl_string())?;
    write_file(&a.out.join("truth.json"), &truth.to_json())?;
    write_file(&a.out.join("query.json"), &serialize_activity_graph(&a.template.query()))?;
    writeln!(
        stdout,
        "{} observations, {} tracklets, {} planted {}\nwrote {}",
        store.len(),
        store.tracklets().len(),
        truth.instances.len(),
        a.template,
        a.out.display()
    )
    .map_err(data)
}

fn eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let doc: ResultDocument =
        serde_json::from_str(&read(&a.result)?).map_err(|e| CliError::Data(format!("{}: {e}", a.result.display())))?;
    let truth = GroundTruth::from_json(&read(&a.truth)?).map_err(|e| CliError::Data(format!("{}: {e}", a.truth.display())))?;
    let instances: Vec<_> = truth
        .instances
        .into_iter()
        .filter(|i| a.template.is_none_or(|t| t == i.template))
        .collect();
    let returns: Vec<_> = doc.groundings.iter().map(|g| (g.full_log_score, g.volume)).collect();
    let report = evaluate_ranked(&returns, &instances);
    if let Some(path) = &a.pr_csv {
        write_file(path, &report.pr_csv())?;
    }
    emit(a.out.as_deref(), &report.to_json(), report.table().trim_end(), stdout)
}

fn oracle(a: OracleArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = load_archive(&a.inputs.archive)?;
    let models = load_models(&a.inputs.models)?;
    let graph = load_query(&a.inputs.query)?;
    let best = brute_force_ground(&graph, &store, &models)?;
    let summary = format!("best log score {:.6}", best.full_log_score);
    emit(a.out.as_deref(), &pretty(&best), &summary, stdout)
}

fn serve(a: ServeArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let models = load_models(&a.models)?;
    let archive = a.archive.as_deref().map(load_archive).transpose()?;
    let state = service::AppState::new(archive, models, a.log.clone()).map_err(data)?;
    let addr = std::net::SocketAddr::new(a.bind, a.port);
    writeln!(stdout, "listening on http://{addr}").map_err(data)?;
    stdout.flush().map_err(data)?;
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime
        .block_on(service::serve(state, addr, a.assets))
        .map_err(|e| CliError::Data(format!("server: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_1() {
        let mut out = Vec::new();
        assert_eq!(run(["actgraph", "frobnicate"], &mut out), 1);
        assert_eq!(run(["actgraph", "query", "--archive", "a"], &mut out), 1);
        let eta_out_of_range = ["actgraph", "plan", "--archive", "a", "--models", "m", "--query", "q", "--eta", "1.5"];
        assert_eq!(run(eta_out_of_range, &mut out), 1);
    }

    #[test]
    fn help_documents_defaults_and_exit_codes() {
        for sub in ["ingest", "calibrate", "plan", "query", "generate", "eval", "oracle", "serve"] {
            let mut out = Vec::new();
            assert_eq!(run(["actgraph", sub, "--help"], &mut out), 0, "{sub}");
            let text = String::from_utf8(out).unwrap();
            assert!(text.contains("Exit codes:") && text.contains("3  infeasible"), "{sub}");
        }
        let mut out = Vec::new();
        run(["actgraph", "query", "--help"], &mut out);
        let text = String::from_utf8(out).unwrap();
        for default in ["[default: 0.9]", "[default: 20]", "[default: 3]", "[default: 0.5]"] {
            assert!(text.contains(default), "query help lacks {default}");
        }
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let mut out = Vec::new();
        let argv = ["actgraph", "ingest", "--input", "/nonexistent/obs.jsonl"];
        assert_eq!(run(argv, &mut out), 2);
    }
}
