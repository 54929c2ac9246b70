use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use canprint_core::canframe::{encode_frame, render_waveform, CanFrame};
use canprint_core::channelsim::{apply_channel, segment_from_first_edge, shape_transmit, RawDataset, RawRecord};
use canprint_core::evalkit::{ReportFormat, Verdict};
use canprint_core::features::FEATURE_COUNT;
use canprint_core::formats::{self, config_hash, Provenance, RecordsFile, Task};
use canprint_core::manifest::Manifest;
use canprint_core::pipeline::{self, PipelineError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

const EXIT_MISMATCH: u8 = 3;
const EXIT_UNKNOWN: u8 = 4;

#[derive(Parser)]
#[command(name = "canprint", version, about = "Fingerprint CAN transmitters and channels from physical-layer waveforms")]
struct Cli {
    /// Seed for stages that draw random numbers (simulation, splitting, initialization).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one frame as a time,volts waveform CSV.
    Frame(FrameArgs),
    /// Synthesize labeled raw records from a manifest.
    Simulate(SimulateArgs),
    /// Convert an oscilloscope time,volts CSV into raw records.
    Import(ImportArgs),
    /// Compute the 11 statistical features of every record.
    Extract(ExtractArgs),
    /// Rank features by joint mutual information with a task's labels.
    Rank(RankArgs),
    /// Train a classifier for one task.
    Train(TrainArgs),
    /// Report the confusion matrix of a model on a features file.
    Eval(EvalArgs),
    /// Check whether one record fingerprints as its claimed source.
    Identify(IdentifyArgs),
    /// Run every stage for both tasks.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Channel,
    Ecu,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Channel => Task::Channel,
            TaskArg::Ecu => Task::Ecu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct FrameArgs {
    /// Standard identifier, e.g. 0x12.
    #[arg(long)]
    id: String,
    /// Payload bytes as hex, e.g. 55AA.
    #[arg(long, default_value = "")]
    data: String,
    /// Shape edges with this ECU profile from the manifest.
    #[arg(long)]
    ecu: Option<String>,
    /// Filter through this channel profile from the manifest.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory; defaults to the manifest's paths.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// Two-column time,volts CSV.
    #[arg(long)]
    scope: PathBuf,
    #[arg(long)]
    ecu: String,
    #[arg(long)]
    channel: String,
    #[arg(long, default_value_t = 10e6)]
    sample_rate: f64,
    #[arg(long, default_value_t = 40)]
    window: usize,
    #[arg(long, default_value_t = 4)]
    pretrigger: usize,
    /// Maximum windows to cut; all whole windows when omitted.
    #[arg(long)]
    windows: Option<usize>,
    /// Edge threshold in volts; midway between the extremes when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = FEATURE_COUNT)]
    k: usize,
    /// Supplies task filters and bin count.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for model_<task>.json and trace_<task>.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Features CSV holding the row to check.
    #[arg(long, conflicts_with = "records", required_unless_present = "records")]
    features: Option<PathBuf>,
    /// Raw records CSV holding the row to check.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Zero-based data row.
    #[arg(long, default_value_t = 0)]
    row: usize,
    /// Claimed source class name.
    #[arg(long)]
    claim: String,
    #[arg(long, default_value_t = canprint_core::evalkit::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

/// Manifest and the directory relative output paths resolve against.
fn load_manifest(path: Option<&Path>, seed: Option<u64>) -> Result<(Manifest, PathBuf), Failure> {
    let (mut m, base) = match path {
        Some(p) => (
            Manifest::load(p).map_err(PipelineError::from)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (Manifest::default(), PathBuf::new()),
    };
    if let Some(seed) = seed {
        pipeline::apply_seed(&mut m, seed);
    }
    Ok((m, base))
}

fn out_dir(explicit: Option<PathBuf>, m: &Manifest, base: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| base.join(&m.paths.out_dir))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_failure(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn cmd_frame(a: FrameArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let (m, _) = load_manifest(a.manifest.as_deref(), seed)?;
    let frame = CanFrame::from_hex(&a.id, &a.data).map_err(|e| config_failure(format!("frame: {e}")))?;
    let bits = encode_frame(&frame).map_err(|e| config_failure(format!("frame: {e}")))?;
    let mut wave =
        render_waveform(&bits.bits, &m.sim.signaling).map_err(|e| config_failure(format!("sim.signaling: {e}")))?;
    if let Some(id) = &a.ecu {
        let ecu = m
            .sim
            .ecus
            .iter()
            .find(|e| &e.ecu_id == id)
            .ok_or_else(|| config_failure(format!("unknown ECU {id:?}")))?;
        wave = shape_transmit(&wave, ecu, seed.unwrap_or(m.sim.rng_seed)).map_err(PipelineError::from)?;
    }
    if let Some(id) = &a.channel {
        let ch = m
            .sim
            .channels
            .iter()
            .find(|c| &c.channel_id == id)
            .ok_or_else(|| config_failure(format!("unknown channel {id:?}")))?;
        wave = apply_channel(&wave, ch).map_err(PipelineError::from)?;
    }
    let mut buf = Vec::new();
    formats::write_scope_csv(&mut buf, &wave).map_err(|e| config_failure(e.to_string()))?;
    emit(a.out.as_deref(), &buf)?;
    Ok(0)
}

fn cmd_simulate(a: SimulateArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let (m, base) = load_manifest(a.manifest.as_deref(), seed)?;
    let dir = out_dir(a.out, &m, &base);
    create_dir(&dir)?;
    let (records, summary) = pipeline::simulate(&m.sim)?;
    pipeline::write_records_file(&dir.join("records.csv"), &records)?;
    pipeline::write_text(&dir.join("summary.json"), &pipeline::to_json(&summary))?;
    println!("{}", dir.join("records.csv").display());
    println!("{}", dir.join("summary.json").display());
    Ok(0)
}

fn cmd_import(a: ImportArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let bytes = std::fs::read(&a.scope).map_err(|e| io_failure(&a.scope, e))?;
    let wave = formats::read_scope_csv(&bytes[..], a.sample_rate).map_err(|source| {
        Failure::from(PipelineError::Format {
            context: a.scope.display().to_string(),
            source,
        })
    })?;
    if a.window == 0 {
        return Err(config_failure("--window must be positive"));
    }
    let threshold = a.threshold.unwrap_or_else(|| {
        let (lo, hi) = wave
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        0.5 * (lo + hi)
    });
    let windows = segment_from_first_edge(&wave, threshold, a.window, a.pretrigger, a.windows)
        .map_err(|e| config_failure(format!("{}: {e}", a.scope.display())))?;
    let records = windows
        .into_iter()
        .map(|samples| RawRecord {
            ecu_id: a.ecu.clone(),
            channel_id: a.channel.clone(),
            samples,
        })
        .collect();
    let capture_digest = hex::encode(Sha256::digest(&bytes));
    let file = RecordsFile {
        provenance: Provenance {
            seed: seed.unwrap_or(0),
            config_hash: config_hash(&(
                "import",
                &capture_digest,
                &a.ecu,
                &a.channel,
                a.sample_rate,
                a.window,
                a.pretrigger,
                a.windows,
                threshold,
            )),
        },
        data: RawDataset {
            sample_rate_hz: a.sample_rate,
            window_len: a.window,
            records,
        },
    };
    pipeline::write_records_file(&a.out, &file)?;
    Ok(0)
}

fn cmd_extract(a: ExtractArgs) -> Result<u8, Failure> {
    let records = pipeline::read_records_file(&a.records)?;
    let features = pipeline::extract_features(&records)?;
    pipeline::write_features_file(&a.out, &features)?;
    Ok(0)
}

fn cmd_rank(a: RankArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let (m, _) = load_manifest(a.manifest.as_deref(), seed)?;
    let features = pipeline::read_features_file(&a.features)?;
    let task = Task::from(a.task);
    let doc = pipeline::rank(&features, task, m.tasks.get(task), a.k, m.features.bins)?;
    emit(a.out.as_deref(), pipeline::to_json(&doc).as_bytes())?;
    Ok(0)
}

fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let (m, _) = load_manifest(a.manifest.as_deref(), seed)?;
    let features = pipeline::read_features_file(&a.features)?;
    let task = Task::from(a.task);
    let (doc, trace) = pipeline::train(&features, task, m.tasks.get(task), &m.split)?;
    create_dir(&a.out)?;
    let name = task.as_str();
    pipeline::write_text(&a.out.join(format!("model_{name}.json")), &doc.to_json())?;
    pipeline::write_trace_file(&a.out.join(format!("trace_{name}.csv")), &doc, &trace)?;
    eprintln!(
        "trained {name} model {:?}: {} epochs, loss {:.6}, stop {:?}",
        doc.layer_sizes, doc.training.epochs_run, doc.training.final_loss, doc.training.stop_reason
    );
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> Result<u8, Failure> {
    let doc = pipeline::read_model_file(&a.model)?;
    let features = pipeline::read_features_file(&a.features)?;
    let report = pipeline::evaluate(&doc, &features)?;
    emit(a.out.as_deref(), report.render(a.format.into()).as_bytes())?;
    Ok(0)
}

fn row_out_of_range(row: usize, rows: usize) -> Failure {
    config_failure(format!("--row {row} is out of range; file has {rows} data rows"))
}

fn cmd_identify(a: IdentifyArgs) -> Result<u8, Failure> {
    let doc = pipeline::read_model_file(&a.model)?;
    let x = if let Some(path) = &a.features {
        let f = pipeline::read_features_file(path)?;
        let rows = f.rows.len();
        f.rows.get(a.row).ok_or_else(|| row_out_of_range(a.row, rows))?.features.to_vec()
    } else {
        let path = a.records.as_ref().expect("clap requires one input");
        let r = pipeline::read_records_file(path)?;
        let rows = r.data.records.len();
        let rec = r.data.records.get(a.row).ok_or_else(|| row_out_of_range(a.row, rows))?;
        pipeline::features_of_window(&rec.samples, r.data.sample_rate_hz)?
    };
    let verdict = pipeline::identify(&doc, &x, &a.claim, a.threshold)?;
    emit(a.out.as_deref(), pipeline::to_json(&verdict).as_bytes())?;
    Ok(match verdict.verdict {
        Verdict::Match => 0,
        Verdict::Mismatch => EXIT_MISMATCH,
        Verdict::Unknown => EXIT_UNKNOWN,
    })
}

fn cmd_pipeline(a: PipelineArgs, seed: Option<u64>) -> Result<u8, Failure> {
    let (m, base) = load_manifest(a.manifest.as_deref(), seed)?;
    let dir = out_dir(a.out, &m, &base);
    for p in pipeline::run_pipeline(&m, &dir)? {
        println!("{}", p.display());
    }
    Ok(0)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("CANPRINT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_failure(format!("CANPRINT_THREADS={raw:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_failure(format!("CANPRINT_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    let seed = cli.seed;
    match cli.command {
        Command::Frame(a) => cmd_frame(a, seed),
        Command::Simulate(a) => cmd_simulate(a, seed),
        Command::Import(a) => cmd_import(a, seed),
        Command::Extract(a) => cmd_extract(a),
        Command::Rank(a) => cmd_rank(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Eval(a) => cmd_eval(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Pipeline(a) => cmd_pipeline(a, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("canprint: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
