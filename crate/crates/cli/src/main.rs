//! `neglect-mapper`: simulate assessments, benchmark strategies, render
//! heatmaps, compute metrics and serve the HTTP API.

use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neglect_core::assessment::{resume, run_assessment, EngineError, SessionState};
use neglect_core::benchmark::{parse_budgets, rows_to_csv, run_benchmark, BenchmarkError, BenchmarkSpec, Strategy};
use neglect_core::domain::{FovBounds, Mode};
use neglect_core::gp::GpError;
use neglect_core::heatmap::{default_mask_threshold, evaluate_grid, render, Which, DEFAULT_GRID};
use neglect_core::metrics::{complete_trace, compute_sam, find_gaps, read_scores_csv, read_trace_csv, read_trace_jsonl, roc_curve};
use neglect_core::subject_sim::{NeglectField, SimulatedSubject};
use neglect_core::treatment::{extract_border, BorderOptions, DEFAULT_THRESHOLD};
use neglect_core::{GpModel, SessionConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "neglect-mapper", version, about = "Map and train visuospatial neglect with Gaussian-process active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session against a simulated subject.
    Simulate(SimulateArgs),
    /// Compare sampling strategies by RMSE against simulated ground truth.
    Benchmark(BenchmarkArgs),
    /// Render a stored model as CSV, PPM or PNG.
    Heatmap(HeatmapArgs),
    /// Exploration metrics from head/eye traces and score files.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Extract the neglect border of a stored model as JSON.
    Border(BorderArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Subject profile JSON.
    #[arg(long)]
    profile: PathBuf,
    /// Session configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration seed; also seeds the subject.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Zero all timestamps so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Assessment model to cue from; required for treatment configs.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Directory of subject profile JSON files.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "us,ivr,random,grid")]
    strategies: Vec<Strategy>,
    /// `a..b`, `a..b:step` or a comma list.
    #[arg(long, default_value = "10..80")]
    budgets: String,
    /// Number of seeds, run as 0..n.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// Base session configuration (scene, layout, timing).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Csv,
    Ppm,
    Png,
}

#[derive(Clone, Copy, ValueEnum)]
enum Map {
    Mean,
    TwoSigma,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the output file extension.
    #[arg(long, value_enum)]
    format: Option<ImageFormat>,
    #[arg(long, value_enum, default_value = "mean")]
    which: Map,
    #[arg(long, default_value_t = DEFAULT_GRID.0)]
    nx: usize,
    #[arg(long, default_value_t = DEFAULT_GRID.1)]
    ny: usize,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Search-area middle per channel from a CSV or JSONL trace.
    Sam {
        #[arg(long)]
        trace: PathBuf,
    },
    /// ROC curve, AUC and Youden cut-off from `score,label` rows.
    Roc {
        #[arg(long)]
        scores: PathBuf,
    },
}

#[derive(Args)]
struct BorderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
}

/// Failures mapped to exit codes 2 (data) and 3 (numerical).
enum Failure {
    Data(String),
    Numerical(String),
}

impl Failure {
    fn data(msg: impl ToString) -> Self {
        Failure::Data(msg.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Gp(GpError::Numerical { .. }) => Failure::Numerical(e.to_string()),
            other => Failure::data(other),
        }
    }
}

impl From<BenchmarkError> for Failure {
    fn from(e: BenchmarkError) -> Self {
        match e {
            BenchmarkError::Engine(inner) => inner.into(),
            other => Failure::data(other),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<SessionConfig, Failure> {
    let config: SessionConfig = load_json(path)?;
    config.validate().map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn simulate(args: SimulateArgs) -> Outcome {
    let field = NeglectField::from_json_file(&args.profile).map_err(Failure::data)?;
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mut subject = SimulatedSubject::new(field, config.t_max_s, config.difficulty, config.seed);
    let state = match config.mode {
        Mode::Assessment => run_assessment(config, &mut subject)?,
        Mode::Treatment => {
            let path = args.model.as_deref().ok_or_else(|| Failure::data("treatment configs need --model"))?;
            let model: GpModel = load_json(path)?;
            let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let id = neglect_core::assessment::default_session_id(&config);
            resume(SessionState::new_treatment(id, config, model, &source)?, &mut subject)?
        }
    };

    fs::create_dir_all(&args.out).map_err(|e| Failure::data(format!("{}: {e}", args.out.display())))?;
    write(&args.out.join("session.json"), state.to_json(args.deterministic))?;
    if let Some(model) = &state.model {
        write(&args.out.join("model.json"), serde_json::to_string_pretty(model).expect("model serializes"))?;
        let h = evaluate_grid(model, &FovBounds::FULL, DEFAULT_GRID.0, DEFAULT_GRID.1, default_mask_threshold(model)).map_err(Failure::data)?;
        write(&args.out.join("heatmap.csv"), h.to_csv())?;
        write(&args.out.join("heatmap_mean.ppm"), render(&h, Which::Mean).to_ppm())?;
        write(&args.out.join("heatmap_two_sigma.ppm"), render(&h, Which::TwoSigma).to_ppm())?;
    }
    print_json(&json!({
        "session_id": state.session_id,
        "phase": state.phase,
        "n_measured": state.measurements.len(),
        "theta": state.model.as_ref().map(|m| *m.theta()),
        "out": args.out,
    }));
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Outcome {
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.profiles)
        .map_err(|e| Failure::data(format!("{}: {e}", args.profiles.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Failure::data(format!("no *.json profiles in {}", args.profiles.display())));
    }
    let profiles = entries
        .iter()
        .map(|p| Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), NeglectField::from_json_file(p).map_err(Failure::data)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let base = match &args.config {
        Some(p) => load_config(p)?,
        None => SessionConfig::default(),
    };
    let mut strategies = args.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let spec = BenchmarkSpec {
        profiles,
        strategies,
        budgets: parse_budgets(&args.budgets).map_err(Failure::data)?,
        seeds: (0..args.seeds).collect(),
        base,
    };
    let rows = run_benchmark(&spec)?;
    write(&args.out, rows_to_csv(&rows))?;

    // Mean RMSE per cell on stdout.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "profile,strategy,budget,mean_rmse");
    for chunk in rows.chunk_by(|a, b| (&a.profile, a.strategy, a.budget) == (&b.profile, b.strategy, b.budget)) {
        let mean = chunk.iter().map(|r| r.rmse).sum::<f64>() / chunk.len() as f64;
        let _ = writeln!(stdout, "{},{},{},{mean:.4}", chunk[0].profile, chunk[0].strategy, chunk[0].budget);
    }
    Ok(())
}

fn heatmap(args: HeatmapArgs) -> Outcome {
    let format = match args.format {
        Some(f) => f,
        None => match args.out.extension().and_then(|e| e.to_str()) {
            Some("csv") => ImageFormat::Csv,
            Some("ppm") => ImageFormat::Ppm,
            Some("png") => ImageFormat::Png,
            _ => return Err(Failure::data("cannot infer the format from --out; pass --format")),
        },
    };
    let model: GpModel = load_json(&args.model)?;
    let h = evaluate_grid(&model, &FovBounds::FULL, args.nx, args.ny, default_mask_threshold(&model)).map_err(Failure::data)?;
    let which = match args.which {
        Map::Mean => Which::Mean,
        Map::TwoSigma => Which::TwoSigma,
    };
    match format {
        ImageFormat::Csv => write(&args.out, h.to_csv()),
        ImageFormat::Ppm => write(&args.out, render(&h, which).to_ppm()),
        ImageFormat::Png => write(&args.out, render(&h, which).to_png().map_err(Failure::data)?),
    }
}

fn metrics(cmd: MetricsCommand) -> Outcome {
    match cmd {
        MetricsCommand::Sam { trace } => {
            let file = fs::File::open(&trace).map_err(|e| Failure::data(format!("{}: {e}", trace.display())))?;
            let partial = if trace.extension().is_some_and(|e| e == "jsonl") {
                read_trace_jsonl(std::io::BufReader::new(file))
            } else {
                read_trace_csv(file)
            }
            .map_err(Failure::data)?;
            let samples = complete_trace(&partial).map_err(Failure::data)?;
            let gaps = find_gaps(&samples);
            for g in &gaps {
                eprintln!("warning: {:.3} s gap before sample {}", g.dt_s, g.index);
            }
            let sam = compute_sam(&samples).map_err(Failure::data)?;
            print_json(&json!({
                "gaze_ray": sam.gaze_ray,
                "head": sam.head,
                "eye": sam.eye,
                "head_flags_neglect": sam.head_flags_neglect(),
                "eye_flags_neglect": sam.eye_flags_neglect(),
                "n_samples": samples.len(),
                "gaps": gaps,
            }));
        }
        MetricsCommand::Roc { scores } => {
            let file = fs::File::open(&scores).map_err(|e| Failure::data(format!("{}: {e}", scores.display())))?;
            let (s, l) = read_scores_csv(file).map_err(Failure::data)?;
            print_json(&roc_curve(&s, &l).map_err(Failure::data)?);
        }
    }
    Ok(())
}

fn border(args: BorderArgs) -> Outcome {
    let model: GpModel = load_json(&args.model)?;
    let source = args.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let b = extract_border(&model, args.threshold, &source, &BorderOptions::default()).map_err(Failure::data)?;
    print_json(&json!({
        "points": b.points,
        "threshold": b.threshold,
        "session_ref": b.session_ref,
        "mean_azimuth_deg": b.mean_azimuth(),
    }));
    Ok(())
}

fn serve(args: ServeArgs) -> Outcome {
    tracing_subscriber::fmt()
        .with_max_level(tracing_subscriber::filter::LevelFilter::INFO)
        .with_writer(std::io::stderr)
        .init();
    let app = neglect_server::App::from_env().map_err(Failure::data)?;
    let rt = tokio::runtime::Runtime::new().map_err(Failure::data)?;
    rt.block_on(neglect_server::serve(SocketAddr::new(args.host, args.port), Arc::new(app))).map_err(Failure::data)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Metrics(c) => metrics(c),
        Command::Border(a) => border(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}
